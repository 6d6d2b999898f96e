use std::path::PathBuf;

use tsxd_core::dataset::read_ucr_file;
use tsxd_core::raster::rasterize;
use tsxd_core::PlotConfig;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Regenerate with `TSXD_BLESS=1 cargo test -p tsxd-core --test golden`.
#[test]
fn forda_sample_zero_matches_golden() {
    let records = read_ucr_file(&golden_dir().join("forda_train_row0.tsv")).unwrap();
    assert_eq!(records[0].values.len(), 500);
    let ppm = rasterize(&records[0].values, &PlotConfig::default()).unwrap().to_ppm();
    let path = golden_dir().join("forda_0_224.ppm");
    if std::env::var_os("TSXD_BLESS").is_some() {
        std::fs::write(&path, &ppm).unwrap();
    }
    let golden = std::fs::read(&path).expect("golden image present");
    assert_eq!(ppm.len(), golden.len());
    assert!(ppm == golden, "FordA sample 0 differs from the golden image");
}
