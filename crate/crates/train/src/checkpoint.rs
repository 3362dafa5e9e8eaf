//! Checkpoint directories: `manifest.txt`, `config.toml` and `state.ndb`.
//!
//! The manifest records the architecture and lists every stored tensor with
//! its dtype and shape. Loading validates the architecture against the
//! receiving trainer before touching any state.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use warpseg_core::container::{read_bundle, write_bundle, RawArray};
use warpseg_core::{Optimizer, Scalar, Tensor};

use crate::config::TrainConfig;
use crate::error::{Result, TrainError};
use crate::models::{Parameterized, StudentNet};
use crate::rngstate::RngState;
use crate::trainer::Trainer;

pub const MANIFEST: &str = "manifest.txt";
pub const STATE: &str = "state.ndb";
pub const CONFIG: &str = "config.toml";
const HEADER: &str = "# warpseg checkpoint v1";

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn architecture(t: &Trainer) -> Vec<(&'static str, String)> {
    let m = &t.config.model;
    vec![
        ("mode", t.config.mode.name().to_string()),
        ("classes", t.classes.to_string()),
        ("height", t.height.to_string()),
        ("width", t.width.to_string()),
        ("student_widths", join(&m.student_widths)),
        ("decoder_width", m.decoder_width.to_string()),
        ("discriminators", t.discriminators.len().to_string()),
        ("discriminator_widths", join(&m.discriminator_widths)),
        ("feature_tap", m.feature_tap.to_string()),
    ]
}

fn push_params<T: Scalar>(out: &mut Vec<(String, RawArray)>, prefix: &str, model: &impl Parameterized<T>) {
    for (name, p) in model.named_params() {
        out.push((format!("{prefix}.{name}"), RawArray::from_tensor(p)));
    }
}

fn push_optimizer(out: &mut Vec<(String, RawArray)>, prefix: &str, opt: &Optimizer<f32>) {
    let (buffers, step) = opt.state();
    out.push((format!("{prefix}.step"), RawArray::from_u64(&[1], &[step])));
    out.push((
        format!("{prefix}.count"),
        RawArray::from_u64(&[1], &[buffers.len() as u64]),
    ));
    for (i, b) in buffers.iter().enumerate() {
        out.push((format!("{prefix}.{i}"), RawArray::from_tensor(b)));
    }
}

fn suffix(i: usize) -> char {
    (b'a' + i as u8) as char
}

fn collect(t: &Trainer) -> Vec<(String, RawArray)> {
    let mut out = Vec::new();
    out.push(("iteration".into(), RawArray::from_u64(&[1], &[t.iter as u64])));
    for (i, s) in t.students.iter().enumerate() {
        push_params(&mut out, &format!("student_{}", suffix(i)), s);
    }
    if let Some(teacher) = &t.teacher {
        push_params(&mut out, "teacher", teacher);
    }
    for (i, d) in t.discriminators.iter().enumerate() {
        push_params(&mut out, &format!("disc_{}", suffix(i)), d);
    }
    for (i, o) in t.student_opt.iter().enumerate() {
        push_optimizer(&mut out, &format!("optim.student_{}", suffix(i)), o);
    }
    for (i, o) in t.disc_opt.iter().enumerate() {
        push_optimizer(&mut out, &format!("optim.disc_{}", suffix(i)), o);
    }
    out.push((
        "rng.warp".into(),
        RawArray::from_u64(&[RngState::WORDS], &RngState::capture(&t.warp_rng).to_words()),
    ));
    let mut streams = vec![("labeled", &t.labeled)];
    if let Some(u) = &t.unlabeled {
        streams.push(("unlabeled", u));
    }
    for (name, s) in streams {
        let (order, head) = s.state();
        out.push((
            format!("stream.{name}.order"),
            RawArray::from_u64(&[order.len()], &order),
        ));
        out.push((format!("stream.{name}.head"), RawArray::from_u64(&[head.len()], &head)));
    }
    out
}

/// Writes the full training state to `dir` (created if needed).
pub fn save(t: &Trainer, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let arrays = collect(t);
    let mut manifest = format!("{HEADER}\niteration {}\n", t.iter);
    for (k, v) in architecture(t) {
        manifest.push_str(&format!("{k} {v}\n"));
    }
    for (name, a) in &arrays {
        manifest.push_str(&format!("tensor {name} {} {}\n", a.dtype.name(), join(&a.shape)));
    }
    write_bundle(&dir.join(STATE), &arrays)?;
    fs::write(dir.join(CONFIG), t.config.to_toml())?;
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

struct Manifest {
    fields: BTreeMap<String, String>,
    tensors: Vec<(String, String, String)>,
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text =
        fs::read_to_string(&path).map_err(|e| TrainError::Manifest(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(TrainError::Manifest("unrecognised header".into()));
    }
    let mut fields = BTreeMap::new();
    let mut tensors = Vec::new();
    for line in lines {
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        if key == "tensor" {
            let mut parts = rest.splitn(3, ' ');
            let name = parts.next().unwrap_or_default().to_string();
            let dtype = parts.next().unwrap_or_default().to_string();
            let shape = parts.next().unwrap_or_default().to_string();
            tensors.push((name, dtype, shape));
        } else {
            fields.insert(key.to_string(), rest.to_string());
        }
    }
    Ok(Manifest { fields, tensors })
}

/// Reads the configuration stored alongside a checkpoint.
pub fn read_config(dir: &Path) -> Result<TrainConfig> {
    let path = dir.join(CONFIG);
    let text =
        fs::read_to_string(&path).map_err(|e| TrainError::Manifest(format!("cannot read {}: {e}", path.display())))?;
    TrainConfig::from_toml(&text)
}

fn take_tensor<T: Scalar>(arrays: &mut BTreeMap<String, RawArray>, name: &str, like: &Tensor<T>) -> Result<Tensor<T>> {
    let a = arrays
        .remove(name)
        .ok_or_else(|| TrainError::Manifest(format!("state lacks tensor {name}")))?;
    if a.shape != like.shape() {
        return Err(TrainError::Manifest(format!(
            "tensor {name} has shape {:?}, model expects {:?}",
            a.shape,
            like.shape()
        )));
    }
    Ok(a.to_tensor()?)
}

fn take_u64(arrays: &mut BTreeMap<String, RawArray>, name: &str) -> Result<Vec<u64>> {
    arrays
        .remove(name)
        .ok_or_else(|| TrainError::Manifest(format!("state lacks {name}")))?
        .to_u64()
        .map_err(Into::into)
}

fn load_params<T: Scalar>(
    arrays: &mut BTreeMap<String, RawArray>,
    prefix: &str,
    model: &mut impl Parameterized<T>,
) -> Result<()> {
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let mut loaded = Vec::with_capacity(names.len());
    for (name, p) in names.iter().zip(model.params()) {
        loaded.push(take_tensor(arrays, &format!("{prefix}.{name}"), p)?);
    }
    for (dst, src) in model.params_mut().into_iter().zip(loaded) {
        dst.data_mut().copy_from_slice(src.data());
        dst.zero_grad();
    }
    Ok(())
}

fn load_optimizer(arrays: &mut BTreeMap<String, RawArray>, prefix: &str, opt: &mut Optimizer<f32>) -> Result<()> {
    let step = take_u64(arrays, &format!("{prefix}.step"))?[0];
    let count = take_u64(arrays, &format!("{prefix}.count"))?[0] as usize;
    let mut buffers = Vec::with_capacity(count);
    for i in 0..count {
        let name = format!("{prefix}.{i}");
        let a = arrays
            .remove(&name)
            .ok_or_else(|| TrainError::Manifest(format!("state lacks {name}")))?;
        buffers.push(a.to_tensor()?);
    }
    opt.load_state(buffers, step)?;
    Ok(())
}

/// Restores the state saved by [`save`] into a trainer built from a
/// compatible configuration.
pub fn load(t: &mut Trainer, dir: &Path) -> Result<()> {
    let manifest = read_manifest(dir)?;
    for (key, expected) in architecture(t) {
        match manifest.fields.get(key) {
            Some(v) if *v == expected => {}
            Some(v) => {
                return Err(TrainError::Manifest(format!(
                    "{key} is {v:?} in the checkpoint but {expected:?} in the configuration"
                )))
            }
            None => return Err(TrainError::Manifest(format!("checkpoint does not record {key}"))),
        }
    }
    let mut arrays: BTreeMap<String, RawArray> = read_bundle(&dir.join(STATE))?.into_iter().collect();
    for (name, dtype, shape) in &manifest.tensors {
        let a = arrays
            .get(name)
            .ok_or_else(|| TrainError::Manifest(format!("listed tensor {name} missing from state")))?;
        if a.dtype.name() != dtype || join(&a.shape) != *shape {
            return Err(TrainError::Manifest(format!(
                "tensor {name} disagrees with the manifest"
            )));
        }
    }
    if manifest.tensors.len() != arrays.len() {
        return Err(TrainError::Manifest(
            "state holds tensors the manifest does not list".into(),
        ));
    }

    let iter = take_u64(&mut arrays, "iteration")?[0] as usize;
    for (i, s) in t.students.iter_mut().enumerate() {
        load_params(&mut arrays, &format!("student_{}", suffix(i)), s)?;
    }
    if let Some(teacher) = t.teacher.as_mut() {
        load_params(&mut arrays, "teacher", teacher)?;
    }
    for (i, d) in t.discriminators.iter_mut().enumerate() {
        load_params(&mut arrays, &format!("disc_{}", suffix(i)), d)?;
    }
    for (i, o) in t.student_opt.iter_mut().enumerate() {
        load_optimizer(&mut arrays, &format!("optim.student_{}", suffix(i)), o)?;
    }
    for (i, o) in t.disc_opt.iter_mut().enumerate() {
        load_optimizer(&mut arrays, &format!("optim.disc_{}", suffix(i)), o)?;
    }
    t.warp_rng = RngState::from_words(&take_u64(&mut arrays, "rng.warp")?)?.restore();
    let order = take_u64(&mut arrays, "stream.labeled.order")?;
    let head = take_u64(&mut arrays, "stream.labeled.head")?;
    t.labeled.restore(order, &head)?;
    if let Some(u) = t.unlabeled.as_mut() {
        let order = take_u64(&mut arrays, "stream.unlabeled.order")?;
        let head = take_u64(&mut arrays, "stream.unlabeled.head")?;
        u.restore(order, &head)?;
    }
    if iter > t.config.iterations {
        return Err(TrainError::Manifest(format!(
            "checkpoint is at iteration {iter}, past the configured {} iterations",
            t.config.iterations
        )));
    }
    t.iter = iter;
    Ok(())
}

/// Rebuilds the evaluable models (students and teacher) of a checkpoint.
pub fn load_models(dir: &Path) -> Result<Vec<(String, StudentNet<f32>)>> {
    let config = read_config(dir)?;
    let manifest = read_manifest(dir)?;
    let classes: usize = manifest
        .fields
        .get("classes")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| TrainError::Manifest("checkpoint does not record classes".into()))?;
    let mut arrays: BTreeMap<String, RawArray> = read_bundle(&dir.join(STATE))?.into_iter().collect();
    let scfg = config.student_config(classes);
    let mut names: Vec<String> = (0..config.mode.students())
        .map(|i| format!("student_{}", suffix(i)))
        .collect();
    if config.mode == crate::config::Mode::MeanTeacher {
        names.push("teacher".into());
    }
    let mut out = Vec::new();
    for name in names {
        let mut net = StudentNet::new(scfg, 0, 0)?;
        load_params(&mut arrays, &name, &mut net)?;
        out.push((name, net));
    }
    Ok(out)
}
