//! Browser bindings: synthesize a scene, re-render it with a different
//! stroke threshold or style, and read off measurements and answers.

use diagram_sdf::renderer::DEFAULT_MARGIN;
use diagram_sdf::{
    answer_choice, auto_viewport, batch_optimize, measure_all, parse_spec, render_image,
    sample_grid, Annotations, CrowdPolicy, OptimizeResult, OptimizerConfig, SceneSpec, Style,
};
use wasm_bindgen::prelude::*;

/// An optimized layout together with the scene it came from.
#[wasm_bindgen]
pub struct Diagram {
    spec: SceneSpec,
    run: OptimizeResult,
    accuracy: f64,
    usable: bool,
}

impl Diagram {
    /// Runs `batch` seeds starting at `seed` and keeps the best run, or the
    /// lowest-loss one when none converged.
    pub fn build(text: &str, seed: u64, batch: usize, steps: usize) -> Result<Diagram, String> {
        let spec = parse_spec(text).map_err(|diags| {
            diags
                .iter()
                .map(|d| d.render("scene"))
                .collect::<Vec<_>>()
                .join("\n")
        })?;
        let ocfg = OptimizerConfig {
            max_steps: steps.max(1),
            ..OptimizerConfig::default()
        };
        let report = batch_optimize(&spec, batch.max(1), seed, &ocfg, CrowdPolicy::default())
            .map_err(|e| e.to_string())?;
        let usable = report.best().is_some();
        let run = match report.best() {
            Some(b) => b.clone(),
            None => report
                .runs
                .iter()
                .min_by(|a, b| a.final_loss.total_cmp(&b.final_loss))
                .cloned()
                .ok_or("empty batch")?,
        };
        Ok(Diagram {
            spec,
            run,
            accuracy: report.accuracy,
            usable,
        })
    }

    pub fn rgba(&self, resolution: usize, threshold: f64, heatmap: bool, labels: bool) -> Result<Vec<u8>, String> {
        let cfg = &self.run.final_config;
        let grid = sample_grid(cfg, resolution, auto_viewport(cfg, DEFAULT_MARGIN))
            .map_err(|e| e.to_string())?;
        let ann = labels.then(|| Annotations::from_scene(&self.spec, cfg));
        let style = if heatmap { Style::Heatmap } else { Style::Mask };
        let img = render_image(&grid, threshold, style, ann.as_ref()).map_err(|e| e.to_string())?;
        Ok(img.to_rgba())
    }

    pub fn measurements(&self) -> Result<String, String> {
        let m = measure_all(&self.spec, &self.run.final_config).map_err(|e| e.to_string())?;
        serde_json::to_string(&m).map_err(|e| e.to_string())
    }

    /// Index of the choice nearest to the first target's measured value.
    pub fn choose(&self, choices: &[f64]) -> Result<usize, String> {
        let m = measure_all(&self.spec, &self.run.final_config).map_err(|e| e.to_string())?;
        let first = m.first().ok_or("scene has no target")?;
        answer_choice(first.value, choices).map_err(|e| e.to_string())
    }
}

#[wasm_bindgen]
impl Diagram {
    pub fn loss(&self) -> f64 {
        self.run.final_loss
    }

    /// Whether the shown run converged without collapsing.
    pub fn converged(&self) -> bool {
        self.usable
    }

    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }

    pub fn seed(&self) -> f64 {
        self.run.seed as f64
    }

    pub fn steps(&self) -> usize {
        self.run.steps_taken
    }

    /// RGBA pixels of a `resolution x resolution` image.
    pub fn render(&self, resolution: usize, threshold: f64, heatmap: bool, labels: bool) -> Result<Vec<u8>, JsError> {
        self.rgba(resolution, threshold, heatmap, labels)
            .map_err(|e| JsError::new(&e))
    }

    /// Measured targets as a JSON array.
    pub fn measure(&self) -> Result<String, JsError> {
        self.measurements().map_err(|e| JsError::new(&e))
    }

    pub fn answer(&self, choices: Vec<f64>) -> Result<usize, JsError> {
        self.choose(&choices).map_err(|e| JsError::new(&e))
    }
}

#[wasm_bindgen]
pub fn synthesize(text: &str, seed: u32, batch: usize, steps: usize) -> Result<Diagram, JsError> {
    Diagram::build(text, seed.into(), batch, steps).map_err(|e| JsError::new(&e))
}
