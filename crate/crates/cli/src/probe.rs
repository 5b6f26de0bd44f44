//! Probe reports on a trained model.

use std::path::Path;

use serde_json::json;
use uavm::probes::{
    self, export_embeddings, mean_attention_mae, modality_probe, retrieval_recall, temporal_attention_heatmap,
    ProbeReport, ProbeResult, ProbeSettings, REPORT_VERSION,
};
use uavm::{Dataset, ModelMode, Result, Uavm, UavmError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSel {
    All,
    One(usize),
}

impl std::str::FromStr for LayerSel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Self::All);
        }
        s.parse().map(Self::One).map_err(|_| format!("`{s}` is neither a layer index nor `all`"))
    }
}

#[derive(Clone, Debug)]
pub struct ProbeRequest {
    pub name: String,
    pub layer: Option<LayerSel>,
    pub ks: Vec<usize>,
    pub seed: u64,
    /// Sample used by the heatmap probe; the first eval sample otherwise.
    pub sample: Option<String>,
}

fn layers(model: &Uavm, sel: LayerSel) -> Vec<usize> {
    match sel {
        LayerSel::All => (0..=model.config().num_transformer_layers()).collect(),
        LayerSel::One(l) => vec![l],
    }
}

/// Runs one probe, writes its report (and any side files) into `out`, and
/// returns the report.
pub fn run(model: &Uavm, checkpoint_id: &str, data: &Dataset, req: &ProbeRequest, out: &Path) -> Result<ProbeReport> {
    let last = model.config().num_transformer_layers();
    let mut results = Vec::new();
    let mut notes = Vec::new();
    let settings;
    match req.name.as_str() {
        "modality" => {
            let s = ProbeSettings::default();
            let sel = req.layer.unwrap_or(LayerSel::All);
            for layer in layers(model, sel) {
                let r = modality_probe(model, data, layer, req.seed, s)?;
                results.push(ProbeResult {
                    metric: "modality_accuracy".into(),
                    layer: Some(layer),
                    value: r.accuracy,
                    ..Default::default()
                });
            }
            settings = json!({ "l2": s.l2, "iterations": s.iterations, "split": "50/50 by sample id" });
        }
        "retrieval" => {
            let sel = req.layer.unwrap_or(LayerSel::One(last));
            for layer in layers(model, sel) {
                let r = retrieval_recall(model, data, layer, &req.ks)?;
                for rec in &r.recalls {
                    for (direction, value) in [("audio_to_video", rec.audio_to_video), ("video_to_audio", rec.video_to_audio)] {
                        results.push(ProbeResult {
                            metric: "recall_at_k".into(),
                            layer: Some(layer),
                            k: Some(rec.k),
                            direction: Some(direction.into()),
                            value,
                            ..Default::default()
                        });
                    }
                }
                if r.excluded > 0 {
                    notes.push(format!("layer {layer}: {} zero-norm items excluded", r.excluded));
                }
            }
            settings = json!({ "ks": req.ks, "similarity": "cosine" });
        }
        "attention" => {
            let value = mean_attention_mae(model, data)?;
            results.push(ProbeResult {
                metric: "attention_mae".into(),
                layer: Some(last),
                value,
                ..Default::default()
            });
            if model.config().mode == ModelMode::Independent {
                notes.push("independent model: heads are paired by index across two unrelated networks".into());
            }
            settings = json!({ "samples": data.len(), "heads": "paired by index" });
        }
        "heatmap" => {
            let layer = match req.layer.unwrap_or(LayerSel::One(last)) {
                LayerSel::One(l) => l,
                LayerSel::All => return Err(UavmError::Config("the heatmap probe takes one --layer".into())),
            };
            let sample = match &req.sample {
                Some(id) => data
                    .find(id)
                    .ok_or_else(|| UavmError::Data(format!("no sample `{id}` in the dataset")))?,
                None => data
                    .samples
                    .first()
                    .ok_or_else(|| UavmError::EmptyInput("dataset has no samples".into()))?,
            };
            let h = temporal_attention_heatmap(model, sample, layer)?;
            let file = out.join(format!("heatmap_layer{layer}.csv"));
            h.write_csv(&file)?;
            for (direction, maps) in [("audio", &h.audio), ("video", &h.video)] {
                for (head, row) in maps.iter().enumerate() {
                    results.push(ProbeResult {
                        metric: "peak_attention".into(),
                        layer: Some(layer),
                        direction: Some(direction.into()),
                        head: Some(head),
                        value: row.iter().copied().fold(0.0, f64::max),
                        ..Default::default()
                    });
                }
            }
            notes.push(format!("heatmap written to {}", file.display()));
            settings = json!({ "sample_id": sample.sample_id() });
        }
        "embeddings" => {
            let ls = layers(model, req.layer.unwrap_or(LayerSel::All));
            let file = out.join("embeddings.csv");
            let rows = export_embeddings(model, data, &ls, &file)?;
            notes.push(format!("{rows} rows written to {}", file.display()));
            settings = json!({ "layers": ls });
        }
        other => {
            return Err(UavmError::Config(format!(
                "unknown probe `{other}` (expected one of {})",
                probes::PROBE_NAMES.join(", ")
            )))
        }
    }
    let report = ProbeReport {
        format_version: REPORT_VERSION,
        probe: req.name.clone(),
        seed: req.seed,
        checkpoint_id: checkpoint_id.to_string(),
        settings,
        results,
        notes,
    };
    report.validate(last)?;
    let path = out.join(format!("probe_{}.json", req.name));
    std::fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| crate::experiment::io_err(&path, e))?;
    Ok(report)
}
