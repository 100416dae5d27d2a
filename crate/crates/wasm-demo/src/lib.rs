//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function has a plain Rust twin in [`ops`] so the logic can be
//! tested natively.

use wasm_bindgen::prelude::*;

pub mod ops {
    use echosr::analysis::{area_ratio, cofb_order_study, erf_map, ErfMap, ErfOptions, THRESHOLDS};
    use echosr::data::{resize_image, ImageBuffer};
    use echosr::nn::{
        chb_forward, cofb_forward, gcp_forward, la_forward, mrfe_forward, params, Bound, Mode, ParamStore,
    };
    use echosr::ModelConfig;
    use serde_json::json;

    pub const BLOCKS: [&str; 5] = ["la", "mrfe", "gcp", "cofb", "chb"];

    /// Largest map side the page may request; keeps a single call under a second or so.
    pub const MAX_SIZE: usize = 96;

    fn err(e: impl std::fmt::Display) -> String {
        e.to_string()
    }

    fn check_size(size: usize, samples: usize) -> Result<(), String> {
        if !(8..=MAX_SIZE).contains(&size) {
            return Err(format!("size must be in 8..={MAX_SIZE}, got {size}"));
        }
        if !(1..=16).contains(&samples) {
            return Err(format!("samples must be in 1..=16, got {samples}"));
        }
        Ok(())
    }

    fn map_json(map: &ErfMap) -> Result<serde_json::Value, String> {
        let table = area_ratio(map, &THRESHOLDS, "").map_err(err)?;
        Ok(json!({
            "height": map.height,
            "width": map.width,
            "grid": map.normalized(),
            "thresholds": table.thresholds,
            "ratios": table.ratios,
        }))
    }

    /// ERF of one randomly initialized block on a `size×size` input with 12 channels.
    pub fn block_erf(block: &str, size: usize, samples: usize, seed: u64) -> Result<String, String> {
        check_size(size, samples)?;
        let cfg = ModelConfig::micro(2, 12);
        let mut b = params::SpecBuilder::default();
        match block {
            "la" => params::la_specs(&mut b, "", &cfg),
            "mrfe" => params::mrfe_specs(&mut b, "", &cfg),
            "gcp" => params::gcp_specs(&mut b, "", &cfg),
            "cofb" => params::cofb_specs(&mut b, "", &cfg),
            "chb" => params::chb_specs(&mut b, "", &cfg),
            other => return Err(format!("unknown block `{other}`; expected one of {BLOCKS:?}")),
        }
        let store = ParamStore::init(&b.specs, seed);
        let opts = ErfOptions {
            samples,
            seed,
            channel: None,
        };
        let map = erf_map(cfg.channels, size, size, &opts, |g, x| {
            let bound = Bound::new(g, &store, Mode::Eval, false);
            let s = bound.root();
            match block {
                "la" => la_forward(&s, x, &cfg),
                "mrfe" => mrfe_forward(&s, x, &cfg),
                "gcp" => gcp_forward(&s, x, &cfg),
                "cofb" => cofb_forward(&s, x, &cfg),
                _ => chb_forward(&s, x, &cfg),
            }
        })
        .map_err(err)?;
        Ok(map_json(&map).map_err(err)?.to_string())
    }

    /// Area ratios of the features before and after a cascade with `kernels`
    /// (applied in order), and their relative change.
    pub fn cascade_compare(kernels: &[usize], size: usize, samples: usize, seed: u64) -> Result<String, String> {
        check_size(size, samples)?;
        let opts = ErfOptions {
            samples,
            seed,
            channel: None,
        };
        let table = cofb_order_study(&ModelConfig::micro(2, 12), kernels, seed, size, &opts).map_err(err)?;
        serde_json::to_string(&table).map_err(err)
    }

    /// Bicubic resampling of RGBA canvas pixels; alpha is set opaque.
    pub fn resample(rgba: &[u8], width: usize, height: usize, out_w: usize, out_h: usize) -> Result<Vec<u8>, String> {
        if rgba.len() != width * height * 4 {
            return Err(format!("expected {} RGBA bytes, got {}", width * height * 4, rgba.len()));
        }
        if out_w * out_h > 4096 * 4096 {
            return Err(format!("{out_w}x{out_h} is too large"));
        }
        let rgb: Vec<u8> = rgba.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
        let img = ImageBuffer::new(width, height, rgb).map_err(err)?;
        let out = resize_image(&img, out_w, out_h).map_err(err)?;
        Ok(out.pixels().chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect())
    }
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

/// JSON `{height, width, grid, thresholds, ratios}`; `grid` is scaled to a maximum of 1.
#[wasm_bindgen(js_name = blockErf)]
pub fn block_erf(block: &str, size: usize, samples: usize, seed: u32) -> Result<String, JsError> {
    ops::block_erf(block, size, samples, seed as u64).map_err(js)
}

/// JSON `{before, after, change}` for a cascade of two depthwise kernels.
#[wasm_bindgen(js_name = cascadeCompare)]
pub fn cascade_compare(first: usize, second: usize, size: usize, samples: usize, seed: u32) -> Result<String, JsError> {
    ops::cascade_compare(&[first, second], size, samples, seed as u64).map_err(js)
}

#[wasm_bindgen]
pub fn resample(rgba: &[u8], width: usize, height: usize, out_w: usize, out_h: usize) -> Result<Vec<u8>, JsError> {
    ops::resample(rgba, width, height, out_w, out_h).map_err(js)
}
