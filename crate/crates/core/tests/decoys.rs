use tsxil_core::autodiff::dft;
use tsxil_core::data::{split, split_counts, ClassificationDataset, ForecastSeries, SplitTag};
use tsxil_core::decoys::*;
use tsxil_core::feedback::Mask;
use tsxil_core::synthetic::BumpTask;
use tsxil_core::Error;

fn ramp(n: usize) -> Vec<f64> {
    (0..n).map(|v| v as f64).collect()
}

#[test]
fn backcopy_schematic() {
    let b = inject_fc_backcopy(&ramp(24), 9, 3, 6).unwrap();
    assert_eq!(b.windows.starts, vec![0, 6, 12]);
    assert_eq!(b.overwritten, vec![0, 12]);
    let expected_modified: Vec<f64> =
        [9, 10, 11, 3, 4, 5, 6, 7, 8, 9, 10, 11, 21, 22, 23, 15, 16, 17, 18, 19, 20, 21, 22, 23].iter().map(|&v| v as f64).collect();
    assert_eq!(b.modified, expected_modified);

    let w = |v: &[i32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    assert_eq!(b.windows.inputs[0], w(&[9, 10, 11, 3, 4, 5, 6, 7, 8]));
    assert_eq!(b.windows.targets[0], w(&[9, 10, 11]));
    assert_eq!(b.windows.inputs[1], w(&[6, 7, 8, 9, 10, 11, 21, 22, 23]));
    assert_eq!(b.windows.targets[1], w(&[15, 16, 17]));
    assert_eq!(b.windows.inputs[2], w(&[21, 22, 23, 15, 16, 17, 18, 19, 20]));
    assert_eq!(b.windows.targets[2], w(&[21, 22, 23]));

    let bits: Vec<Vec<bool>> = b.masks.masks.iter().map(|m| m.bits.clone()).collect();
    let on = vec![true, true, true, false, false, false, false, false, false];
    assert_eq!(bits, vec![on.clone(), vec![false; 9], on]);
}

#[test]
fn backcopy_needs_two_windows() {
    assert!(matches!(inject_fc_backcopy(&ramp(12), 9, 3, 6), Err(Error::SeriesTooShort { .. })));
}

#[test]
fn impulse_spectrum_of_dividing_spacing() {
    let len = 32;
    let d = inject_fc_dirac(&vec![0.0; 64], len / 4, 1.0, len).unwrap();
    assert_eq!(d.positions, vec![8, 16, 24, 32, 40, 48, 56]);
    // a window past the first impulse sees the full train
    let spec = dft(&d.modified[4..4 + len]);
    for k in 0..len {
        let mag = spec.re[k].hypot(spec.im[k]);
        if k % 4 != 0 {
            assert!(mag < 1e-9, "bin {k}: {mag}");
        } else {
            assert!((mag - 4.0).abs() < 1e-9, "bin {k}: {mag}");
        }
    }
    assert_eq!(d.mask.re_bins(), vec![0, 4, 8, 12, 16, 20, 24, 28]);
}

#[test]
fn impulse_mask_for_non_dividing_spacing_holds_the_dominant_bins() {
    let d = inject_fc_dirac(&vec![0.0; 64], 5, 1.0, 32).unwrap();
    let mags = dft(&d.modified[5..37]).magnitudes();
    let max = mags.iter().cloned().fold(0.0, f64::max);
    for (k, m) in mags.iter().enumerate() {
        assert_eq!(d.mask.re_bits[k], *m >= 0.5 * max, "bin {k}");
    }
    assert!(d.mask.re_bits[0]);
}

fn bump(seed: u64) -> ClassificationDataset {
    let mut ds = BumpTask { samples: 40, ..Default::default() }.generate(seed).unwrap();
    split(&mut ds, seed).unwrap();
    ds
}

#[test]
fn spatial_decoy_touches_train_segment_only() {
    let ds = bump(1);
    let cfg = DecoyConfig { offset: 5, segment_len: 8, amplitude: 2.0, ..DecoyConfig::new(DecoyKind::ClsSpatial) };
    let (out, masks) = inject_cls_spatial(&ds, &cfg).unwrap();
    for i in 0..ds.len() {
        let changed: Vec<bool> = ds.series[i].iter().zip(&out.series[i]).map(|(a, b)| a != b).collect();
        let m = &masks.masks[i];
        if ds.tag(i) == SplitTag::Train {
            assert_eq!(out.series[i][5..13], spatial_pattern(ds.labels[i], 8, 2.0)[..]);
            assert_eq!(m.intervals(), vec![(5, 13)]);
            // the mask covers every changed position
            assert!(changed.iter().zip(&m.bits).all(|(c, b)| !c || *b));
        } else {
            assert_eq!(out.series[i], ds.series[i]);
            assert!(m.is_empty());
        }
    }
    assert_eq!(out.header.decoys.len(), 1);
}

#[test]
fn frequency_decoy_lands_on_the_class_bin() {
    let ds = bump(2);
    let cfg = DecoyConfig { amplitude: 1.5, base_frequency: 10, ..DecoyConfig::new(DecoyKind::ClsFrequency) };
    let (out, masks) = inject_cls_frequency(&ds, &cfg).unwrap();
    let len = ds.series_len();
    for i in ds.indices(SplitTag::Train) {
        let diff: Vec<f64> = out.series[i].iter().zip(&ds.series[i]).map(|(a, b)| a - b).collect();
        let spec = dft(&diff);
        let f = 10 + ds.labels[i];
        for k in 0..len {
            let expected = if k == f { -1.5 * len as f64 / 2.0 } else if k == len - f { 1.5 * len as f64 / 2.0 } else { 0.0 };
            assert!(spec.re[k].abs() < 1e-9);
            assert!((spec.im[k] - expected).abs() < 1e-9, "bin {k}: {}", spec.im[k]);
        }
        assert_eq!(masks.masks[i].re_bins(), vec![f, len - f]);
        assert_eq!(masks.masks[i].im_bins(), vec![f, len - f]);
    }
    for i in ds.indices(SplitTag::Test) {
        assert_eq!(out.series[i], ds.series[i]);
    }
}

#[test]
fn frequency_decoy_rejects_bins_past_nyquist() {
    let ds = bump(3);
    let cfg = DecoyConfig { base_frequency: 32, ..DecoyConfig::new(DecoyKind::ClsFrequency) };
    assert!(matches!(inject_cls_frequency(&ds, &cfg), Err(Error::Config(_))));
}

#[test]
fn repeated_decoy_is_rejected() {
    let ds = bump(4);
    let cfg = DecoyConfig::new(DecoyKind::ClsSpatial);
    let (once, _) = inject_cls_spatial(&ds, &cfg).unwrap();
    assert!(matches!(inject_cls_spatial(&once, &cfg), Err(Error::AlreadyDecoyed(_))));
    let fr = DecoyConfig { base_frequency: 10, ..DecoyConfig::new(DecoyKind::ClsFrequency) };
    let (both, _) = inject_cls_frequency(&once, &fr).unwrap();
    assert_eq!(both.header.decoys.iter().map(|d| d.kind).collect::<Vec<_>>(), vec![DecoyKind::ClsSpatial, DecoyKind::ClsFrequency]);
}

#[test]
fn forecast_decoys_leave_validation_and_test_segments_alone() {
    let values: Vec<f64> = (0..400).map(|t| (t as f64 * 0.3).sin()).collect();
    let series = ForecastSeries::new("s", values, 16, 4).unwrap();
    let (train, _, _) = split_counts(400);
    assert_eq!(series.train_end, train);
    let decoys = [DecoyConfig { spacing: 5, amplitude: 2.0, ..DecoyConfig::new(DecoyKind::FcDirac) }, DecoyConfig::new(DecoyKind::FcBackcopy)];
    let out = decoy_forecast(&series, &decoys, 8).unwrap();
    assert_eq!(out.series.segment(SplitTag::Val), series.segment(SplitTag::Val));
    assert_eq!(out.series.segment(SplitTag::Test), series.segment(SplitTag::Test));
    assert_ne!(out.series.segment(SplitTag::Train), series.segment(SplitTag::Train));
    let time = out.time_feedback.unwrap();
    let freq = out.frequency_feedback.unwrap();
    assert_eq!(time.masks.len(), out.train.len());
    assert_eq!(freq.masks.len(), out.train.len());
    assert_eq!(time.annotated(), out.train.len().div_ceil(2));
}

#[test]
fn decoy_kind_names_round_trip() {
    for k in [DecoyKind::ClsSpatial, DecoyKind::ClsFrequency, DecoyKind::FcBackcopy, DecoyKind::FcDirac] {
        assert_eq!(k.name().parse::<DecoyKind>().unwrap(), k);
    }
    assert!("sine".parse::<DecoyKind>().is_err());
}
