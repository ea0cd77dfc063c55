//! Versioned model checkpoints: one JSON file holding the model config,
//! the vocabularies, and every parameter tensor with its shape.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::Vocabs;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::util::RunRng;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: ModelConfig,
    vocabs: Vocabs,
    tensors: Vec<NamedTensor>,
}

/// Write `model` and its vocabularies to `path` as JSON.
pub fn save_checkpoint(path: &Path, model: &Model, vocabs: &Vocabs) -> Result<()> {
    let mut tensors = Vec::new();
    for (name, view) in model.param_tensors() {
        let data: Vec<f64> = view.iter().copied().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: format!("refusing to save non-finite parameter {name}"),
            });
        }
        tensors.push(NamedTensor { name, shape: view.shape().to_vec(), data });
    }
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        vocabs: vocabs.clone(),
        tensors,
    };
    let writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer(writer, &file)?;
    Ok(())
}

/// Load a checkpoint. Any mismatch between the stored tensors and the
/// shapes implied by the stored config is a hard error.
pub fn load_checkpoint(path: &Path) -> Result<(Model, Vocabs)> {
    let reader = BufReader::new(File::open(path)?);
    let file: CheckpointFile = serde_json::from_reader(reader)?;
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::validation(format!(
            "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    file.config.validate()?;
    let mut vocabs = file.vocabs;
    vocabs.tokens.rebuild_index();
    for (name, stored, got) in [
        ("token", file.config.encoder.vocab_size, vocabs.tokens.len()),
        ("relation", file.config.num_relations, vocabs.relations.len()),
        ("tag", file.config.num_tags, vocabs.tags.len()),
    ] {
        if stored != got {
            return Err(Error::validation(format!(
                "checkpoint config expects {stored} {name} entries but the stored vocabulary has {got}"
            )));
        }
    }

    let mut model = Model::new(file.config, &mut RunRng::seed_from_u64(0))?;
    let mut params = model.param_tensors_mut();
    if file.tensors.len() != params.len() {
        return Err(Error::validation(format!(
            "checkpoint holds {} tensors, model defines {}",
            file.tensors.len(),
            params.len()
        )));
    }
    for tensor in &file.tensors {
        let slot = params
            .iter_mut()
            .find(|(name, _)| *name == tensor.name)
            .ok_or_else(|| {
                Error::validation(format!("checkpoint tensor {:?} is not a model parameter", tensor.name))
            })?;
        if slot.1.shape() != tensor.shape.as_slice() {
            return Err(Error::validation(format!(
                "shape mismatch for {:?}: checkpoint {:?}, model {:?}",
                tensor.name,
                tensor.shape,
                slot.1.shape()
            )));
        }
        if tensor.data.len() != slot.1.len() {
            return Err(Error::validation(format!(
                "tensor {:?} stores {} values for shape {:?}",
                tensor.name,
                tensor.data.len(),
                tensor.shape
            )));
        }
        slot.1.as_slice_mut().unwrap().copy_from_slice(&tensor.data);
    }
    drop(params);
    Ok((model, vocabs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::synth::{gen_synthetic, SynthConfig, NEGATIVE_RELATION};
    use crate::util::Mode;
    use rand::SeedableRng;

    fn setup() -> (Model, Vocabs, crate::data::Batch) {
        let config = SynthConfig { num_docs: 3, doc_len: 12, vocab_size: 40, seed: 5, ..SynthConfig::default() };
        let docs = gen_synthetic(&config).unwrap();
        let vocabs = Vocabs::from_documents(&docs, NEGATIVE_RELATION).unwrap();
        let enc = EncoderConfig {
            d_model: 8,
            num_layers: 1,
            num_heads: 2,
            ffn_filters: 4,
            ..EncoderConfig::new(vocabs.tokens.len(), 24)
        };
        let mut mc = ModelConfig::new(enc, vocabs.relations.len(), vocabs.tags.len());
        mc.proj_hidden = 4;
        mc.proj_dim = 3;
        let mut rng = RunRng::seed_from_u64(11);
        let model = Model::new(mc, &mut rng).unwrap();
        let refs: Vec<&crate::data::Document> = docs.iter().collect();
        let batch = crate::data::make_batch(&refs, &vocabs.tokens, &vocabs.relations, &vocabs.tags, 24).unwrap();
        (model, vocabs, batch)
    }

    #[test]
    fn round_trip_preserves_every_parameter_and_output() {
        let (model, vocabs, batch) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&path, &model, &vocabs).unwrap();
        let (loaded, loaded_vocabs) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded_vocabs, vocabs);
        for ((an, a), (bn, b)) in model.param_tensors().iter().zip(&loaded.param_tensors()) {
            assert_eq!(an, bn);
            assert_eq!(a, b, "parameter {an} changed across a round trip");
        }
        // Scores are reproduced bit for bit.
        let mut rng = RunRng::seed_from_u64(0);
        let (out_a, _) = model.forward_re(&batch, Mode::Eval, &mut rng).unwrap();
        let (out_b, _) = loaded.forward_re(&batch, Mode::Eval, &mut rng).unwrap();
        assert_eq!(out_a.combined, out_b.combined);
        // The rebuilt token index resolves known and unknown tokens.
        let known = vocabs.tokens.names()[2].clone();
        assert_eq!(loaded_vocabs.tokens.id_or_unk(&known), 2);
        assert_eq!(loaded_vocabs.tokens.id_or_unk("definitely-not-a-token"), crate::data::UNK_ID);
    }

    #[test]
    fn corrupted_shape_is_a_hard_error() {
        let (model, vocabs, _) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&path, &model, &vocabs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let tensor = &mut value["tensors"][0];
        tensor["shape"][0] = serde_json::json!(tensor["shape"][0].as_u64().unwrap() + 1);
        std::fs::write(&path, serde_json::to_string(&value).unwrap()).unwrap();
        let err = match load_checkpoint(&path) {
            Ok(_) => panic!("shape mismatch must fail"),
            Err(e) => e.to_string(),
        };
        assert!(err.contains("shape mismatch"), "{err}");
    }

    #[test]
    fn unknown_version_and_missing_tensor_fail() {
        let (model, vocabs, _) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&path, &model, &vocabs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();

        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value["version"] = serde_json::json!(99);
        std::fs::write(&path, serde_json::to_string(&value).unwrap()).unwrap();
        assert!(load_checkpoint(&path).is_err());

        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let renamed = &mut value["tensors"][3];
        renamed["name"] = serde_json::json!("no.such.tensor");
        std::fs::write(&path, serde_json::to_string(&value).unwrap()).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
