use std::ffi::{c_char, CStr, CString};
use std::ptr;

use cfnet_ffi::*;

fn last_error() -> String {
    let len = unsafe { cfnet_last_error_message(ptr::null_mut(), 0) };
    let mut buf = vec![0u8; len + 1];
    unsafe { cfnet_last_error_message(buf.as_mut_ptr().cast(), buf.len()) };
    CStr::from_bytes_until_nul(&buf).unwrap().to_string_lossy().into_owned()
}

const SMALL: &str = r#"{"m":16,"n":2,"t":10,"frames":3,"s_bar":5,"s_c":2,"snr_db":30.0,
    "layers_coarse":2,"layers_fine":2,"seed":9}"#;

struct Fixture {
    cfg: *mut CfnetConfig,
    ds: *mut CfnetDataset,
}

impl Fixture {
    fn new(count: usize) -> Self {
        let json = CString::new(SMALL).unwrap();
        let mut cfg = ptr::null_mut();
        assert_eq!(unsafe { cfnet_config_from_json(json.as_ptr(), &mut cfg) }, CfnetStatus::Ok, "{}", last_error());
        let mut ds = ptr::null_mut();
        assert_eq!(unsafe { cfnet_dataset_generate(cfg, count, 5, &mut ds) }, CfnetStatus::Ok);
        Fixture { cfg, ds }
    }
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe {
            cfnet_dataset_free(self.ds);
            cfnet_config_free(self.cfg);
        }
    }
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(cfnet_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn dataset_buffers_have_advertised_shapes() {
    let f = Fixture::new(3);
    assert_eq!(unsafe { cfnet_dataset_len(f.ds) }, 3);
    let (mut obs, mut truth) = (CfnetShape::default(), CfnetShape::default());
    assert_eq!(unsafe { cfnet_dataset_shapes(f.ds, &mut obs, &mut truth) }, CfnetStatus::Ok);
    assert_eq!((obs.rows, obs.cols, truth.rows, truth.cols), (20, 6, 32, 6));

    let mut buf = vec![0.0; truth.rows * truth.cols];
    assert_eq!(unsafe { cfnet_dataset_truth(f.ds, 2, buf.as_mut_ptr(), buf.len()) }, CfnetStatus::Ok);
    assert!(buf.iter().any(|&x| x != 0.0));

    let mut short = vec![0.0; 5];
    let st = unsafe { cfnet_dataset_observation(f.ds, 0, short.as_mut_ptr(), short.len()) };
    assert_eq!(st, CfnetStatus::BufferTooSmall);
    assert!(last_error().contains("120 needed"), "{}", last_error());
    let st = unsafe { cfnet_dataset_observation(f.ds, 3, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(st, CfnetStatus::InvalidArgument);
}

#[test]
fn generation_is_deterministic_across_handles() {
    let (a, b) = (Fixture::new(2), Fixture::new(2));
    let mut x = vec![0.0; 120];
    let mut y = vec![1.0; 120];
    unsafe {
        cfnet_dataset_observation(a.ds, 1, x.as_mut_ptr(), x.len());
        cfnet_dataset_observation(b.ds, 1, y.as_mut_ptr(), y.len());
    }
    assert_eq!(x, y);
}

#[test]
fn estimate_matches_core() {
    let f = Fixture::new(4);
    let scheme = CString::new("C-F-BSS").unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { cfnet_model_untrained(scheme.as_ptr(), f.ds, 0.05, &mut model) }, CfnetStatus::Ok);
    assert_eq!(unsafe { cfnet_model_layers(model) }, 4);

    let mut obs = vec![0.0; 120];
    unsafe { cfnet_dataset_observation(f.ds, 0, obs.as_mut_ptr(), obs.len()) };
    let mut est = vec![0.0; 32 * 6];
    let st = unsafe { cfnet_model_estimate(model, f.ds, obs.as_ptr(), obs.len(), est.as_mut_ptr(), est.len()) };
    assert_eq!(st, CfnetStatus::Ok, "{}", last_error());

    let cfg = serde_json::from_str(SMALL).unwrap();
    let ds = cfnet::simgen::gen_dataset(&cfg, 4, 5).unwrap();
    let core = cfnet::bench::SchemeModel::untrained("C-F-BSS".parse().unwrap(), &cfg, ds.phi_lifted.view(), 0.05).unwrap();
    let want = core.estimate(ds.phi_lifted.view(), ds.samples[0].lifted_obs.mat.view(), 2).unwrap();
    assert_eq!(est, want.iter().copied().collect::<Vec<_>>());

    let mut db = 0.0;
    assert_eq!(unsafe { cfnet_model_evaluate(model, f.ds, CfnetNmseVariant::Unsquared, &mut db) }, CfnetStatus::Ok);
    assert!(db.is_finite() && db < 0.0, "{db}");
    let st = unsafe { cfnet_model_estimate(model, f.ds, obs.as_ptr(), 7, est.as_mut_ptr(), est.len()) };
    assert_eq!(st, CfnetStatus::ShapeMismatch);
    unsafe { cfnet_model_free(model) };
}

#[test]
fn errors_map_to_status_codes() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { cfnet_config_from_json(ptr::null(), &mut cfg) }, CfnetStatus::NullPointer);
    let bad = CString::new(r#"{"m":16}"#).unwrap();
    assert_eq!(unsafe { cfnet_config_from_json(bad.as_ptr(), &mut cfg) }, CfnetStatus::InvalidConfig);
    assert!(last_error().contains("missing field"), "{}", last_error());
    assert!(cfg.is_null());

    let f = Fixture::new(1);
    let name = CString::new("not-a-scheme").unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { cfnet_model_untrained(name.as_ptr(), f.ds, 0.1, &mut model) }, CfnetStatus::InvalidArgument);

    let dir = tempfile::tempdir().unwrap();
    let d = CString::new(dir.path().to_str().unwrap()).unwrap();
    let s = CString::new("C-F-BSS").unwrap();
    assert_eq!(unsafe { cfnet_model_load(d.as_ptr(), s.as_ptr(), f.ds, &mut model) }, CfnetStatus::NotFound);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { cfnet_dataset_load(d.as_ptr(), &mut loaded) }, CfnetStatus::Io);

    let invalid = [0xffu8, 0];
    assert_eq!(
        unsafe { cfnet_model_untrained(invalid.as_ptr() as *const c_char, f.ds, 0.1, &mut model) },
        CfnetStatus::InvalidUtf8
    );
    assert_eq!(unsafe { cfnet_config_set_snr_db(f.cfg, f64::NAN) }, CfnetStatus::InvalidConfig);
}

#[test]
fn checkpoint_round_trip_through_loader() {
    let f = Fixture::new(2);
    let cfg = serde_json::from_str(SMALL).unwrap();
    let ds = cfnet::simgen::gen_dataset(&cfg, 2, 5).unwrap();
    let scheme = "C-F-BFSJ".parse().unwrap();
    let model = cfnet::bench::SchemeModel::untrained(scheme, &cfg, ds.phi_lifted.view(), 0.07).unwrap();
    let dir = tempfile::tempdir().unwrap();
    cfnet::io::save_checkpoint(dir.path(), scheme, &model, &cfnet::io::ArtifactIds::of(&ds)).unwrap();

    let d = CString::new(dir.path().to_str().unwrap()).unwrap();
    let s = CString::new("C-F-BFSJ").unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { cfnet_model_load(d.as_ptr(), s.as_ptr(), f.ds, &mut handle) }, CfnetStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { cfnet_model_layers(handle) }, 4);
    unsafe { cfnet_model_free(handle) };
}

#[test]
fn row_soft_threshold_in_place() {
    let mut m = [3.0, 4.0, 0.3, 0.4];
    let p = m.as_mut_ptr();
    assert_eq!(unsafe { cfnet_row_soft_threshold(p, 2, 2, 1.0, p) }, CfnetStatus::Ok);
    let want = [2.4, 3.2, 0.0, 0.0];
    for (a, b) in m.iter().zip(want) {
        assert!((a - b).abs() < 1e-15, "{m:?}");
    }
    assert_eq!(unsafe { cfnet_row_soft_threshold(p, 2, 2, -1.0, p) }, CfnetStatus::InvalidArgument);
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        cfnet_config_free(ptr::null_mut());
        cfnet_dataset_free(ptr::null_mut());
        cfnet_model_free(ptr::null_mut());
    }
    assert_eq!(unsafe { cfnet_dataset_len(ptr::null()) }, 0);
}
