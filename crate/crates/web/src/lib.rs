//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export takes plain numbers or strings and returns a JSON string, so
//! the page needs no bundler or generated typings beyond `wasm-bindgen`.

use kwass::clustering::{agglomerate, chi_square, contingency, cut, Linkage};
use kwass::distances::{distance_matrix_with_workers, divergence, DivergenceOptions, Metric};
use kwass::synth::{generate, SynthConfig};
use kwass::texture::{glcm, haralick25, threshold_mask, GrayImage, FEATURE_NAMES};
use kwass::{Kernel, SampleSet};
use serde_json::json;
use wasm_bindgen::prelude::*;

const MAX_PER_CLASS: usize = 80;

fn parse_samples(id: &str, text: &str) -> Result<SampleSet, String> {
    let values = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("{id}: '{t}' is not a number")))
        .collect::<Result<Vec<f64>, String>>()?;
    SampleSet::from_scalars(id, &values).map_err(|e| format!("{id}: {e}"))
}

fn options(gamma: f64, rho: f64) -> Result<DivergenceOptions, String> {
    let kernel = Kernel::rbf(gamma).map_err(|e| e.to_string())?;
    Ok(DivergenceOptions { kernel, rho, report_squared: true })
}

/// Every metric between two lists of scalar samples.
pub fn compare_json(x: &str, y: &str, gamma: f64, rho: f64) -> Result<String, String> {
    let x = parse_samples("x", x)?;
    let y = parse_samples("y", y)?;
    let opts = options(gamma, rho)?;
    let mut out = serde_json::Map::new();
    for m in Metric::ALL {
        let v = divergence(m, &x, &y, &opts).map_err(|e| format!("{m}: {e}"))?;
        out.insert(m.as_str().to_string(), json!(v));
    }
    Ok(serde_json::Value::Object(out).to_string())
}

/// Synthetic two-class corpus, its distance matrix in dendrogram leaf
/// order, the two-cluster cut and its chi-square against the classes.
pub fn heatmap_json(
    per_class: usize,
    separation: f64,
    seed: u32,
    metric: &str,
    gamma: f64,
    linkage: &str,
) -> Result<String, String> {
    let metric: Metric = metric.parse().map_err(|e: kwass::Error| e.to_string())?;
    let linkage: Linkage = linkage.parse().map_err(|e: kwass::Error| e.to_string())?;
    let cfg = SynthConfig {
        per_class: per_class.clamp(1, MAX_PER_CLASS),
        separation,
        seed: seed as u64,
        ..SynthConfig::default()
    };
    let corpus = generate(&cfg).map_err(|e| e.to_string())?;
    let d = distance_matrix_with_workers(&corpus.sets, metric, &options(gamma, 0.1)?, 1).map_err(|e| e.to_string())?;
    let tree = agglomerate(&d, linkage).map_err(|e| e.to_string())?;
    let labels = cut(&tree, 2).map_err(|e| e.to_string())?;
    let table = contingency(&labels, &corpus.truth).map_err(|e| e.to_string())?;
    let chi = chi_square(&table).unwrap_or(0.0);
    let order = tree.leaf_order();
    let values: Vec<f64> = order.iter().flat_map(|&i| order.iter().map(move |&j| (i, j))).map(|(i, j)| d.get(i, j)).collect();
    Ok(json!({
        "n": order.len(),
        "order": order,
        "values": values,
        "truth": order.iter().map(|&i| corpus.truth[i]).collect::<Vec<_>>(),
        "clusters": order.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
        "contingency": table,
        "chi_square": chi,
    })
    .to_string())
}

/// Threshold mask, pooled co-occurrence matrix and the 25 raw features.
pub fn texture_json(pixels: &[f64], height: usize, width: usize, levels: usize, percentile: f64) -> Result<String, String> {
    let img = GrayImage::new("canvas", height, width, pixels.to_vec()).map_err(|e| e.to_string())?;
    let mask = threshold_mask(&img, percentile).map_err(|e| e.to_string())?;
    let g = glcm(&img, Some(&mask), levels).map_err(|e| e.to_string())?;
    let f = haralick25(&g);
    Ok(json!({
        "names": FEATURE_NAMES,
        "values": f.values,
        "levels": g.levels(),
        "glcm": g.probabilities(),
        "masked_out": mask.iter().filter(|m| !**m).count(),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn compare(x: &str, y: &str, gamma: f64, rho: f64) -> Result<String, JsError> {
    compare_json(x, y, gamma, rho).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn heatmap(per_class: usize, separation: f64, seed: u32, metric: &str, gamma: f64, linkage: &str) -> Result<String, JsError> {
    heatmap_json(per_class, separation, seed, metric, gamma, linkage).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn texture(pixels: &[f64], height: usize, width: usize, levels: usize, percentile: f64) -> Result<String, JsError> {
    texture_json(pixels, height, width, levels, percentile).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn compare_reports_every_metric() {
        let v: Value = serde_json::from_str(&compare_json("0 1 2", "0.5, 1.5, 4", 1.0, 0.1).unwrap()).unwrap();
        for m in Metric::ALL {
            assert!(v[m.as_str()].as_f64().unwrap() > 0.0, "{m}");
        }
        let same: Value = serde_json::from_str(&compare_json("1 2 3", "1 2 3", 1.0, 0.1).unwrap()).unwrap();
        assert!(same["kernel_w2"].as_f64().unwrap().abs() < 1e-12);
        assert!(compare_json("1 x", "1", 1.0, 0.1).is_err());
        assert!(compare_json("1", "2", -1.0, 0.1).is_err());
    }

    #[test]
    fn heatmap_is_square_and_ordered() {
        let v: Value = serde_json::from_str(&heatmap_json(10, 2.0, 3, "kernel_w2", 1.0, "average").unwrap()).unwrap();
        let n = v["n"].as_u64().unwrap() as usize;
        assert_eq!(n, 20);
        assert_eq!(v["values"].as_array().unwrap().len(), n * n);
        let mut order: Vec<u64> = v["order"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
        order.sort();
        assert_eq!(order, (0..n as u64).collect::<Vec<_>>());
        assert!(heatmap_json(10, 2.0, 3, "cosine", 1.0, "average").is_err());
    }

    #[test]
    fn texture_of_a_ramp() {
        let px: Vec<f64> = (0..64).map(f64::from).collect();
        let v: Value = serde_json::from_str(&texture_json(&px, 8, 8, 8, 5.0).unwrap()).unwrap();
        assert_eq!(v["values"].as_array().unwrap().len(), 25);
        assert_eq!(v["glcm"].as_array().unwrap().len(), 64);
        assert_eq!(v["masked_out"], 4);
        assert!(texture_json(&[1.0; 4], 2, 2, 8, 5.0).is_err());
    }
}
