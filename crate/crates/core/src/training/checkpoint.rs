//! Checkpoint archives.
//!
//! A checkpoint is one safetensors file. Parameter arrays are stored as
//! little-endian `f32` under `<network>/<parameter>` (network names from
//! [`NETWORK_NAMES`](super::NETWORK_NAMES), parameter names from the
//! architecture), and Adam moments under `opt/<network>/m/<parameter>` and
//! `opt/<network>/v/<parameter>`. The header metadata holds a single
//! `manifest` entry: a JSON document with the format version, architecture
//! specs, hop count, the full training config (loss weights included),
//! counters, the sampler state and a SHA-256 digest of all array bytes.

use std::collections::HashMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{bundle_params, AdamState, Optimizers, TrainingConfig, TrainingState, NETWORK_NAMES};
use crate::error::{Error, Result};
use crate::networks::{
    BundleMetadata, DiscriminatorSpec, Generator, GeneratorSpec, ModelBundle, ParamSet, PatchDiscriminator,
};

pub const FORMAT_VERSION: u32 = 1;

const MANIFEST_KEY: &str = "manifest";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    generator_spec: GeneratorSpec,
    discriminator_spec: DiscriminatorSpec,
    trained_hops: usize,
    optimizer_state: bool,
    config: TrainingConfig,
    config_hash: String,
    created_unix: u64,
    epoch: u64,
    step: u64,
    /// Adam step counts in network order.
    adam_steps: [u64; 5],
    rng: ChaCha8Rng,
    tensor_sha256: String,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

fn f32_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// `(name, shape, bytes)` for every stored array in canonical order.
fn arrays(state: &TrainingState) -> Vec<(String, Vec<usize>, Vec<u8>)> {
    let mut out = Vec::new();
    for (net, params) in NETWORK_NAMES.iter().zip(bundle_params(&state.bundle)) {
        for t in params.iter() {
            out.push((format!("{net}/{}", t.name), t.shape.clone(), f32_bytes(&t.data)));
        }
    }
    for (net, adam) in NETWORK_NAMES.iter().zip(state.optimizers.as_array()) {
        for (moment, set) in [("m", &adam.m), ("v", &adam.v)] {
            for t in set.iter() {
                out.push((
                    format!("opt/{net}/{moment}/{}", t.name),
                    t.shape.clone(),
                    f32_bytes(&t.data),
                ));
            }
        }
    }
    out
}

fn digest<'a>(items: impl Iterator<Item = (&'a str, &'a [usize], &'a [u8])>) -> String {
    let mut h = Sha256::new();
    for (name, shape, bytes) in items {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((shape.len() as u64).to_le_bytes());
        for d in shape {
            h.update((*d as u64).to_le_bytes());
        }
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `state` to `path` (via a temporary file and rename).
pub fn save_checkpoint(state: &TrainingState, path: &Path) -> Result<()> {
    let arrays = arrays(state);
    let tensor_sha256 = digest(arrays.iter().map(|(n, s, b)| (n.as_str(), s.as_slice(), b.as_slice())));
    let opt = state.optimizers.as_array();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        generator_spec: state.bundle.generator_spec,
        discriminator_spec: state.bundle.discriminator_spec,
        trained_hops: state.bundle.trained_hops,
        optimizer_state: true,
        config: state.config.clone(),
        config_hash: state.bundle.metadata.config_hash.clone(),
        created_unix: state.bundle.metadata.created_unix,
        epoch: state.epoch,
        step: state.step,
        adam_steps: [opt[0].t, opt[1].t, opt[2].t, opt[3].t, opt[4].t],
        rng: state.rng.clone(),
        tensor_sha256,
    };
    let manifest_json = serde_json::to_string(&manifest).expect("manifest serializes");
    let views = arrays
        .iter()
        .map(|(name, shape, bytes)| {
            let view = TensorView::new(Dtype::F32, shape.clone(), bytes).expect("consistent tensor view");
            (name.clone(), view)
        })
        .collect::<Vec<_>>();
    let metadata = Some(HashMap::from([(MANIFEST_KEY.to_string(), manifest_json)]));
    let bytes = safetensors::serialize(views, &metadata)
        .map_err(|e| Error::Integrity(format!("cannot encode checkpoint: {e}")))?;

    let tmp = path.with_extension("safetensors.tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_params(
    st: &SafeTensors<'_>,
    prefix: &str,
    layout: &[(String, Vec<usize>)],
    hasher_items: &mut Vec<(String, Vec<usize>, Vec<u8>)>,
) -> Result<ParamSet<f32>> {
    let mut set = ParamSet::new();
    for (name, shape) in layout {
        let key = format!("{prefix}{name}");
        let view = st
            .tensor(&key)
            .map_err(|_| Error::Integrity(format!("checkpoint is missing array {key}")))?;
        if view.dtype() != Dtype::F32 || view.shape() != shape.as_slice() {
            return Err(Error::Integrity(format!(
                "array {key} has {:?} {:?}, expected F32 {shape:?}",
                view.dtype(),
                view.shape()
            )));
        }
        let data: Vec<f32> = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        hasher_items.push((key, shape.clone(), view.data().to_vec()));
        set.push(name, shape, data);
    }
    Ok(set)
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<TrainingState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |what: String| Error::Integrity(format!("{}: {what}", path.display()));

    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| corrupt(format!("unreadable archive: {e}")))?;
    let manifest_json = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(MANIFEST_KEY))
        .ok_or_else(|| corrupt("no manifest in header".into()))?;
    let probe: VersionProbe =
        serde_json::from_str(manifest_json).map_err(|e| corrupt(format!("manifest has no format version: {e}")))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: probe.format_version,
            supported: FORMAT_VERSION,
        });
    }
    let manifest: Manifest =
        serde_json::from_str(manifest_json).map_err(|e| corrupt(format!("malformed manifest: {e}")))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| corrupt(format!("unreadable archive: {e}")))?;

    let gen_layout = Generator::<f32>::param_layout(&manifest.generator_spec);
    let disc_layout = PatchDiscriminator::<f32>::param_layout(&manifest.discriminator_spec);
    let layouts = [&gen_layout, &gen_layout, &disc_layout, &disc_layout, &disc_layout];

    let mut seen = Vec::new();
    let mut params = Vec::with_capacity(5);
    for (net, layout) in NETWORK_NAMES.iter().zip(layouts) {
        params.push(read_params(&st, &format!("{net}/"), layout, &mut seen)?);
    }
    let mut moments = Vec::with_capacity(5);
    for (i, (net, layout)) in NETWORK_NAMES.iter().zip(layouts).enumerate() {
        if manifest.optimizer_state {
            let m = read_params(&st, &format!("opt/{net}/m/"), layout, &mut seen)?;
            let v = read_params(&st, &format!("opt/{net}/v/"), layout, &mut seen)?;
            moments.push(AdamState {
                m,
                v,
                t: manifest.adam_steps[i],
            });
        } else {
            moments.push(AdamState::new(&params[i]));
        }
    }
    if st.len() != seen.len() {
        return Err(corrupt(format!("{} arrays stored, {} expected", st.len(), seen.len())));
    }
    let actual = digest(seen.iter().map(|(n, s, b)| (n.as_str(), s.as_slice(), b.as_slice())));
    if actual != manifest.tensor_sha256 {
        return Err(corrupt("array checksum mismatch".into()));
    }

    let mut params = params.into_iter();
    let mut next = || params.next().expect("five parameter sets");
    let bundle = ModelBundle {
        gen_g: Generator::from_params(manifest.generator_spec, next())?,
        gen_f: Generator::from_params(manifest.generator_spec, next())?,
        disc_x: PatchDiscriminator::from_params(manifest.discriminator_spec, next())?,
        disc_y: PatchDiscriminator::from_params(manifest.discriminator_spec, next())?,
        disc_h: PatchDiscriminator::from_params(manifest.discriminator_spec, next())?,
        generator_spec: manifest.generator_spec,
        discriminator_spec: manifest.discriminator_spec,
        trained_hops: manifest.trained_hops,
        metadata: BundleMetadata {
            created_unix: manifest.created_unix,
            config_hash: manifest.config_hash,
        },
    };
    let mut moments = moments.into_iter();
    let mut next = || moments.next().expect("five optimizer states");
    let optimizers = Optimizers {
        gen_g: next(),
        gen_f: next(),
        disc_x: next(),
        disc_y: next(),
        disc_h: next(),
    };
    Ok(TrainingState {
        config: manifest.config,
        bundle,
        optimizers,
        epoch: manifest.epoch,
        step: manifest.step,
        rng: manifest.rng,
    })
}

/// Loads only the networks of a checkpoint.
pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    load_checkpoint(path).map(|s| s.bundle)
}
