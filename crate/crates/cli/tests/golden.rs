//! Golden feature CSV for the checked-in 8×8 fixtures.
//!
//! The expected file is rebuilt here from a brute-force mask and pair
//! enumeration; set `KWASS_BLESS=1` to rewrite it.

use std::path::{Path, PathBuf};
use std::process::Command;

use kwass::distances::format_f64;
use kwass::texture::{haralick25, normalize_corpus, FeatureVector, Glcm, GrayImage, FEATURE_NAMES};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn oracle_mask(px: &[f64], pct: f64) -> Vec<bool> {
    let mut s = px.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = pct / 100.0 * (s.len() - 1) as f64;
    let (lo, frac) = (rank.floor() as usize, rank.fract());
    let cut = if frac == 0.0 { s[lo] } else { s[lo] * (1.0 - frac) + s[lo + 1] * frac };
    px.iter().map(|&v| v > cut).collect()
}

fn oracle_glcm(img: &GrayImage, mask: &[bool], levels: usize) -> Glcm {
    let kept: Vec<f64> = img.pixels().iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| *v).collect();
    let lo = kept.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = kept.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bin = |v: f64| (0..levels).find(|&b| v <= lo + (b + 1) as f64 * (hi - lo) / levels as f64).unwrap();
    let (h, w) = (img.height() as i64, img.width() as i64);
    let mut counts = vec![0u64; levels * levels];
    for a in 0..(h * w) {
        for b in 0..(h * w) {
            let (dr, dc) = ((a / w - b / w).abs(), (a % w - b % w).abs());
            if a != b && dr <= 1 && dc <= 1 && mask[a as usize] && mask[b as usize] {
                counts[bin(img.pixels()[a as usize]) * levels + bin(img.pixels()[b as usize])] += 1;
            }
        }
    }
    Glcm::from_counts(levels, counts).unwrap()
}

fn expected_csv() -> String {
    let dir = fixtures().join("images");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    let mut rows: Vec<(String, FeatureVector)> = paths
        .iter()
        .map(|p| {
            let img = GrayImage::load(p).unwrap();
            let mask = oracle_mask(img.pixels(), 5.0);
            (img.id().to_string(), haralick25(&oracle_glcm(&img, &mask, 64)))
        })
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let normalized = normalize_corpus(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    let mut out = format!("id,{}\n", FEATURE_NAMES.join(","));
    for ((id, _), f) in rows.iter().zip(&normalized) {
        let vals: Vec<String> = f.values.iter().map(|&v| format_f64(v)).collect();
        out.push_str(&format!("{id},{}\n", vals.join(",")));
    }
    out
}

#[test]
fn golden_file_matches_oracle() {
    let golden = fixtures().join("features_golden.csv");
    let expected = expected_csv();
    if std::env::var_os("KWASS_BLESS").is_some() {
        std::fs::write(&golden, &expected).unwrap();
    }
    assert_eq!(std::fs::read_to_string(&golden).unwrap(), expected);
}

#[test]
fn features_command_reproduces_golden_bytes() {
    let out = tempfile::tempdir().unwrap();
    let csv = out.path().join("features.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_kwass"))
        .arg("features")
        .arg(fixtures().join("images"))
        .arg("-o")
        .arg(&csv)
        .status()
        .unwrap();
    assert!(status.success());
    let golden = std::fs::read(fixtures().join("features_golden.csv")).unwrap();
    assert_eq!(std::fs::read(&csv).unwrap(), golden);
}
