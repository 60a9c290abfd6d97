//! Synthetic dumps and manifests for the CLI tests.
#![allow(dead_code)]

#[path = "../../../core/tests/common/mod.rs"]
pub mod oracles;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use memprobe::dump::{write_dump, DumpMeta, ImageTensors, LayerTensors};
use memprobe::manifest::{write_manifest, Category, ImageRecord, Split};
use oracles::Lcg;
use serde_json::Value;

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub images: usize,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub patches: usize,
    pub with_pooled: bool,
    pub seed: u64,
}

impl FixtureSpec {
    pub fn small() -> Self {
        Self {
            images: 3,
            num_layers: 2,
            hidden_dim: 4,
            patches: 3,
            with_pooled: false,
            seed: 1,
        }
    }

    pub fn end_to_end() -> Self {
        Self {
            images: 20,
            num_layers: 4,
            hidden_dim: 8,
            patches: 6,
            with_pooled: false,
            seed: 7,
        }
    }
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub dump: PathBuf,
    pub manifest: PathBuf,
    pub ids: Vec<String>,
    pub memorability: Vec<f64>,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

/// A CLS vector of length `d` whose mean is `target` up to f32 rounding:
/// standard normal entries shifted as a whole.
fn cls_with_mean(rng: &mut Lcg, d: usize, target: f64) -> Vec<f32> {
    let r: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let shift = target - r.iter().sum::<f64>() / d as f64;
    r.iter().map(|v| (v + shift) as f32).collect()
}

/// Images with distinct memorability scores and `act_mean` planted equal to
/// the score at every layer, so `act_mean` is a perfect monotone predictor.
pub fn images(spec: &FixtureSpec) -> (Vec<ImageTensors>, Vec<ImageRecord>) {
    let mut rng = Lcg(spec.seed);
    let mut tensors = Vec::new();
    let mut records = Vec::new();
    for i in 0..spec.images {
        let id = format!("img{i:03}");
        let memorability = 0.3 + 0.6 * ((i * 7) % spec.images) as f64 / spec.images as f64 + 0.001 * rng.uniform();
        let layers = (0..=spec.num_layers)
            .map(|layer| LayerTensors {
                cls: cls_with_mean(&mut rng, spec.hidden_dim, memorability),
                patches: (0..spec.patches * spec.hidden_dim)
                    .map(|_| rng.normal() as f32 + 0.5)
                    .collect(),
                attn_cls: (layer > 0).then(|| (0..spec.patches).map(|_| rng.range(0.01, 1.0) as f32).collect()),
            })
            .collect();
        tensors.push(ImageTensors {
            image_id: id.clone(),
            layers,
            pooled: spec
                .with_pooled
                .then(|| (0..spec.hidden_dim).map(|_| rng.normal() as f32).collect()),
        });
        records.push(ImageRecord {
            image_id: id,
            memorability,
            category: Category::ALL[i % Category::ALL.len()],
            split: if i % 5 == 4 { Split::Val } else { Split::Train },
        });
    }
    (tensors, records)
}

pub fn fixture(spec: &FixtureSpec) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let (tensors, records) = images(spec);
    let dump = dir.path().join("fixture.memv");
    let manifest = dir.path().join("manifest.csv");
    let meta = DumpMeta::new("synthetic", spec.num_layers, spec.hidden_dim, spec.patches);
    write_dump(&dump, &meta, &tensors).unwrap();
    write_manifest(&manifest, &records).unwrap();
    Fixture {
        dir,
        dump,
        manifest,
        ids: records.iter().map(|r| r.image_id.clone()).collect(),
        memorability: records.iter().map(|r| r.memorability).collect(),
    }
}

pub fn memprobe<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_memprobe"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// `<sub> --dump D --manifest M --out O` followed by `extra`.
pub fn run_on(f: &Fixture, sub: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<std::ffi::OsString> = vec![
        sub.into(),
        "--dump".into(),
        f.dump.clone().into(),
        "--manifest".into(),
        f.manifest.clone().into(),
        "--out".into(),
        out.into(),
    ];
    args.extend(extra.iter().map(Into::into));
    memprobe(args)
}

pub fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Edits the JSON header in place and rewrites the file with the payload
/// untouched. Offsets are shifted by however much the header grew or
/// shrank, so relative layouts chosen by `edit` survive.
pub fn rewrite_header(path: &Path, edit: impl Fn(&mut Value)) {
    let bytes = std::fs::read(path).unwrap();
    let old_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as u64;
    let payload = bytes[10 + old_len as usize..].to_vec();
    let mut header: Value = serde_json::from_slice(&bytes[10..10 + old_len as usize]).unwrap();
    edit(&mut header);
    let base = header.clone();
    let mut new_len = old_len;
    let json = loop {
        let mut h = base.clone();
        let delta = new_len as i64 - old_len as i64;
        for t in h["tensors"].as_array_mut().unwrap() {
            let off = t["byte_offset"].as_u64().unwrap() as i64 + delta;
            t["byte_offset"] = Value::from(off as u64);
        }
        let json = serde_json::to_vec(&h).unwrap();
        if json.len() as u64 == new_len {
            break json;
        }
        if (json.len() as u64) < new_len {
            let mut padded = json;
            padded.resize(new_len as usize, b' ');
            break padded;
        }
        new_len = json.len() as u64;
    };
    let mut out = bytes[..6].to_vec();
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    std::fs::write(path, out).unwrap();
}
