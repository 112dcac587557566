use std::ffi::{CStr, CString};
use std::ptr;

use mlc_noise_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(mlcn_last_error()) }.to_string_lossy().into_owned()
}

fn synth(seed: u64) -> *mut MlcnDataset {
    let mut ds = ptr::null_mut();
    let status = unsafe { mlcn_synth_generate(200, 8, 5, 0.2, 0.3, seed, &mut ds) };
    assert_eq!(status, MlcnStatus::Ok, "{}", last_error());
    ds
}

fn labels(ds: *const MlcnDataset) -> Vec<u8> {
    let (mut rows, mut classes) = (0, 0);
    unsafe {
        assert_eq!(mlcn_dataset_shape(ds, &mut rows, ptr::null_mut(), &mut classes), MlcnStatus::Ok);
        let mut out = vec![0u8; rows * classes];
        assert_eq!(mlcn_dataset_labels(ds, out.as_mut_ptr(), out.len()), MlcnStatus::Ok);
        out
    }
}

#[test]
fn uniform_injection_matches_the_flip_mask() {
    let ds = synth(3);
    let (mut noisy, mut ledger) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(mlcn_inject(ds, MlcnNoise::Uniform, 0.1, 9, &mut noisy, &mut ledger), MlcnStatus::Ok);
        let mut eps = 0.0;
        assert_eq!(mlcn_ledger_epsilon(ledger, &mut eps), MlcnStatus::Ok);
        assert_eq!(eps, 0.1);

        let (clean, dirty) = (labels(ds), labels(noisy));
        let mut mask = vec![0u8; clean.len()];
        assert_eq!(mlcn_ledger_flip_mask(ledger, mask.as_mut_ptr(), mask.len()), MlcnStatus::Ok);
        for k in 0..clean.len() {
            assert_eq!(clean[k] ^ dirty[k], mask[k]);
        }

        let mut per_class = [0.0; 5];
        assert_eq!(mlcn_ledger_epsilon_per_class(ledger, per_class.as_mut_ptr(), 5), MlcnStatus::Ok);
        assert!((per_class.iter().sum::<f64>() / 5.0 - 0.1).abs() < 1e-12);

        mlcn_ledger_free(ledger);
        mlcn_dataset_free(noisy);
        mlcn_dataset_free(ds);
    }
}

#[test]
fn mixed_injection_preserves_class_counts() {
    let ds = synth(5);
    let (mut noisy, mut ledger) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(mlcn_inject(ds, MlcnNoise::Mixed, 0.5, 1, &mut noisy, &mut ledger), MlcnStatus::Ok);
        let (clean, dirty) = (labels(ds), labels(noisy));
        for c in 0..5 {
            let count = |v: &[u8]| v.iter().skip(c).step_by(5).filter(|&&b| b == 1).count();
            assert_eq!(count(&clean), count(&dirty));
        }
        mlcn_ledger_free(ledger);
        mlcn_dataset_free(noisy);
        mlcn_dataset_free(ds);
    }
}

#[test]
fn transition_identity_is_a_no_op() {
    let ds = synth(1);
    let identity: Vec<f64> = (0..25).map(|k| if k % 6 == 0 { 1.0 } else { 0.0 }).collect();
    let (mut noisy, mut ledger) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        let status = mlcn_inject_transition(ds, identity.as_ptr(), 5, 2, &mut noisy, &mut ledger);
        assert_eq!(status, MlcnStatus::Ok, "{}", last_error());
        assert_eq!(labels(ds), labels(noisy));
        mlcn_ledger_free(ledger);
        mlcn_dataset_free(noisy);
        mlcn_dataset_free(ds);
    }
}

#[test]
fn errors_carry_a_status_and_message() {
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(mlcn_synth_generate(10, 2, 3, 0.2, 0.0, 0, ptr::null_mut()), MlcnStatus::NullPointer);
        assert!(last_error().contains("out"));

        let missing = CString::new("/nonexistent/data.csv").unwrap();
        assert_eq!(mlcn_dataset_load_csv(missing.as_ptr(), &mut out), MlcnStatus::Io);
        assert!(out.is_null());
        assert!(last_error().contains("/nonexistent/data.csv"));

        let ds = synth(0);
        let (mut noisy, mut ledger) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(mlcn_inject(ds, MlcnNoise::Uniform, 1.5, 0, &mut noisy, &mut ledger), MlcnStatus::InvalidArgument);
        let mut small = [0u8; 3];
        assert_eq!(mlcn_dataset_labels(ds, small.as_mut_ptr(), 3), MlcnStatus::BufferTooSmall);
        mlcn_dataset_free(ds);

        let mut ap = 0.0;
        assert_eq!(mlcn_average_precision([0.3, 0.1].as_ptr(), [0, 0].as_ptr(), 2, &mut ap), MlcnStatus::NoPositives);
        assert_eq!(mlcn_scaled_entropy(5, 4, &mut ap), MlcnStatus::InvalidArgument);

        mlcn_dataset_free(ptr::null_mut());
        mlcn_ledger_free(ptr::null_mut());
        mlcn_report_free(ptr::null_mut());
    }
}

#[test]
fn csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("d.csv").to_str().unwrap()).unwrap();
    let x = [0.5, -1.0, 2.25, 0.0, 1.0, 3.5];
    let y = [1u8, 0, 0, 1, 1, 1];
    let (mut ds, mut back) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(mlcn_dataset_new(x.as_ptr(), y.as_ptr(), 3, 2, 2, &mut ds), MlcnStatus::Ok, "{}", last_error());
        assert_eq!(mlcn_dataset_save_csv(ds, path.as_ptr()), MlcnStatus::Ok);
        assert_eq!(mlcn_dataset_load_csv(path.as_ptr(), &mut back), MlcnStatus::Ok);
        let mut features = [0.0; 6];
        assert_eq!(mlcn_dataset_features(back, features.as_mut_ptr(), 6), MlcnStatus::Ok);
        assert_eq!(features, x);
        assert_eq!(labels(back), y);
        mlcn_dataset_free(back);
        mlcn_dataset_free(ds);
    }
}

#[test]
fn scalar_helpers() {
    assert_eq!(mlcn_forget_rate(1.5, 0.2), 1.5 * 0.2);
    assert_eq!(mlcn_forget_rate(10.0, 0.2), 1.0);
    unsafe {
        let mut h = 0.0;
        assert_eq!(mlcn_scaled_entropy(2, 4, &mut h), MlcnStatus::Ok);
        assert_eq!(h, 1.0);
        assert_eq!(mlcn_scaled_entropy(0, 4, &mut h), MlcnStatus::Ok);
        assert_eq!(h, 0.0);

        // positives at ranks 1 and 3: (1/1 + 2/3) / 2
        let mut ap = 0.0;
        let scores = [0.9, 0.8, 0.7, 0.1];
        let truth = [1u8, 0, 1, 0];
        assert_eq!(mlcn_average_precision(scores.as_ptr(), truth.as_ptr(), 4, &mut ap), MlcnStatus::Ok);
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);

        let mut rate = 0.0;
        assert_eq!(mlcn_mixed_rate_for_target(0.2, 0.2, &mut rate), MlcnStatus::Ok);
        assert!((rate - 0.5).abs() < 1e-12);
    }
}

#[test]
fn selection_keeps_the_smallest_losses() {
    let losses = [0.4, 0.1, 0.9, 0.1, 0.3];
    let mut keep = [9u8; 5];
    unsafe {
        assert_eq!(mlcn_select_small_loss(losses.as_ptr(), 5, 0.4, keep.as_mut_ptr()), MlcnStatus::Ok);
    }
    // ceil(0.6 * 5) = 3 kept; the tie at 0.1 is broken by index
    assert_eq!(keep, [0, 1, 0, 1, 1]);

    // two rows, two classes; class 1 forgets half its cells
    let losses = [0.2, 0.7, 0.5, 0.3];
    let taus = [0.0, 0.5];
    let mut keep = [9u8; 4];
    unsafe {
        assert_eq!(
            mlcn_select_small_loss_per_class(losses.as_ptr(), 2, 2, taus.as_ptr(), keep.as_mut_ptr()),
            MlcnStatus::Ok
        );
    }
    assert_eq!(keep, [1, 0, 1, 1]);
}

#[test]
fn run_config_trains_and_saves() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.cfg");
    std::fs::write(
        &config,
        "trainer.kind = coteaching\n\
         dataset.synth.n = 300\ndataset.synth.d = 8\ndataset.synth.classes = 4\n\
         noise.strategy = uniform\nnoise.epsilon = 0.1\n\
         optim.epochs = 3\nseeds = 7\n",
    )
    .unwrap();
    let config = CString::new(config.to_str().unwrap()).unwrap();
    let json = dir.path().join("out.json");
    let json_c = CString::new(json.to_str().unwrap()).unwrap();
    let mut report = ptr::null_mut();
    unsafe {
        assert_eq!(mlcn_run_config(config.as_ptr(), 0, 0, &mut report), MlcnStatus::Ok, "{}", last_error());
        let (mut epochs, mut map) = (0usize, 0.0);
        assert_eq!(mlcn_report_epochs(report, &mut epochs), MlcnStatus::Ok);
        assert_eq!(mlcn_report_test_map(report, &mut map), MlcnStatus::Ok);
        assert_eq!(epochs, 3);
        assert!((0.0..=1.0).contains(&map));
        assert_eq!(mlcn_report_save_json(report, json_c.as_ptr()), MlcnStatus::Ok);
        mlcn_report_free(report);
    }
    let saved = mlc_noise::report::load_report(&json).unwrap();
    assert_eq!(saved.seed, 7);

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "optim.epochs = lots\n").unwrap();
    let bad = CString::new(bad.to_str().unwrap()).unwrap();
    let mut report = ptr::null_mut();
    unsafe {
        assert_eq!(mlcn_run_config(bad.as_ptr(), 0, 0, &mut report), MlcnStatus::Config);
    }
    assert!(report.is_null());
    assert!(last_error().contains("optim.epochs"));
}
