//! Fixtures shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::fs;
use std::path::Path;

use oodkit::store::{write_bundle, write_bundle_unvalidated, BundleError, MANIFEST};
use oodkit_core::synth::{generate, SynthConfig};
use oodkit_core::{Bundle, EmbeddingMatrix, ViolationKind};
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// A finite, mostly non-zero f32 with a random bit pattern: subnormals,
/// negative zero and extreme exponents all show up.
fn random_f32(rng: &mut Xoshiro256PlusPlus) -> f32 {
    loop {
        let x = f32::from_bits(rng.next_u32());
        if x.is_finite() {
            return x;
        }
    }
}

fn random_matrix(rng: &mut Xoshiro256PlusPlus, rows: usize, dim: usize) -> EmbeddingMatrix {
    let mut values: Vec<f32> = (0..rows * dim).map(|_| random_f32(rng)).collect();
    // keep rows non-zero by pinning one coordinate
    for r in 0..rows {
        values[r * dim] = 1.0 + (r as f32);
    }
    EmbeddingMatrix::new(rows, dim, values).unwrap()
}

/// Valid bundle with arbitrary bit patterns, labels, logits and metadata.
pub fn random_bundle(seed: u64) -> Bundle {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut pick = |lo: u64, hi: u64| (lo + rng.next_u64() % (hi - lo + 1)) as usize;
    let (dim, k, m, n_id, splits) = (pick(1, 17), pick(1, 6), pick(0, 5), pick(1, 40), pick(1, 3));
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ 0x5eed);
    let mut b = Bundle::new(random_matrix(&mut rng, n_id, dim), random_matrix(&mut rng, k, dim), random_matrix(&mut rng, m, dim));
    let mut logits_ood = std::collections::BTreeMap::new();
    for s in 0..splits {
        let n = 1 + (rng.next_u64() % 30) as usize;
        let name = format!("split {s} / ünïcode");
        b.ood_images.insert(name.clone(), random_matrix(&mut rng, n, dim));
        logits_ood.insert(name, random_matrix(&mut rng, n, k));
    }
    b.id_labels = Some((0..n_id).map(|_| (rng.next_u64() % k as u64) as u32).collect());
    b.logits = Some(oodkit_core::Logits { id: random_matrix(&mut rng, n_id, k), ood: logits_ood });
    b.metadata.insert("seed".into(), seed.to_string());
    b.metadata.insert("note".into(), "quotes \" and\nnewlines".into());
    assert!(b.is_valid(), "{:?}", b.validate());
    b
}

/// Small synthetic bundle with logits, used as the base for mutations.
pub fn base_bundle() -> Bundle {
    generate(&SynthConfig {
        dim: 8,
        k: 3,
        m: 2,
        n_id: 12,
        n_ood: 10,
        seed: 5,
        logit_scale: Some(10.0),
        ..Default::default()
    })
    .unwrap()
}

pub fn first_ood(b: &mut Bundle) -> &mut EmbeddingMatrix {
    b.ood_images.values_mut().next().unwrap()
}

/// What a mutated bundle must be rejected with.
pub enum Expect {
    Violation(fn(&ViolationKind) -> bool),
    Error(fn(&BundleError) -> bool),
}

pub struct Mutation {
    pub name: &'static str,
    /// Writes the broken bundle into an empty directory.
    pub build: fn(&Path),
    pub expect: Expect,
}

fn invalid(dir: &Path, f: fn(&mut Bundle)) {
    let mut b = base_bundle();
    f(&mut b);
    assert!(!b.is_valid());
    write_bundle_unvalidated(&b, dir).unwrap();
}

fn edit_manifest(dir: &Path, f: fn(&mut serde_json::Value)) {
    write_bundle(&base_bundle(), dir).unwrap();
    let path = dir.join(MANIFEST);
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    f(&mut v);
    fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

fn entry<'a>(v: &'a mut serde_json::Value, file: &str) -> &'a mut serde_json::Value {
    v["matrices"].as_array_mut().unwrap().iter_mut().find(|e| e["file"] == file).unwrap()
}

fn set_row(m: &mut EmbeddingMatrix, row: usize, value: f32) {
    let dim = m.dim();
    m.values_mut()[row * dim..(row + 1) * dim].fill(value);
}

fn logits(b: &mut Bundle) -> &mut oodkit_core::Logits {
    b.logits.as_mut().unwrap()
}

pub fn mutations() -> Vec<Mutation> {
    use Expect::{Error, Violation};
    use ViolationKind as V;
    vec![
        Mutation {
            name: "nan_in_id_images",
            build: |d| invalid(d, |b| b.id_images.values_mut()[3] = f32::NAN),
            expect: Violation(|v| matches!(v, V::NonFinite { .. })),
        },
        Mutation {
            name: "inf_in_ood_prompts",
            build: |d| invalid(d, |b| b.ood_prompts.values_mut()[0] = f32::NEG_INFINITY),
            expect: Violation(|v| matches!(v, V::NonFinite { .. })),
        },
        Mutation {
            name: "nan_in_ood_logits",
            build: |d| invalid(d, |b| logits(b).ood.values_mut().next().unwrap().values_mut()[1] = f32::NAN),
            expect: Violation(|v| matches!(v, V::NonFinite { .. })),
        },
        Mutation {
            name: "zero_row_id_prompts",
            build: |d| invalid(d, |b| set_row(&mut b.id_prompts, 1, 0.0)),
            expect: Violation(|v| matches!(v, V::ZeroRow)),
        },
        Mutation {
            name: "zero_row_ood_images",
            build: |d| invalid(d, |b| set_row(first_ood(b), 0, -0.0)),
            expect: Violation(|v| matches!(v, V::ZeroRow)),
        },
        Mutation {
            name: "no_id_prompts",
            build: |d| invalid(d, |b| b.id_prompts = EmbeddingMatrix::empty(8).unwrap()),
            expect: Violation(|v| matches!(v, V::EmptyMatrix)),
        },
        Mutation {
            name: "empty_ood_dataset",
            build: |d| {
                invalid(d, |b| {
                    *first_ood(b) = EmbeddingMatrix::empty(8).unwrap();
                    *logits(b).ood.values_mut().next().unwrap() = EmbeddingMatrix::empty(3).unwrap();
                })
            },
            expect: Violation(|v| matches!(v, V::EmptyMatrix)),
        },
        Mutation {
            name: "ood_prompt_dim_mismatch",
            build: |d| invalid(d, |b| b.ood_prompts = EmbeddingMatrix::new(1, 7, vec![1.0; 7]).unwrap()),
            expect: Violation(|v| matches!(v, V::DimMismatch { expected: 8, actual: 7 })),
        },
        Mutation {
            name: "label_out_of_range",
            build: |d| invalid(d, |b| b.id_labels.as_mut().unwrap()[0] = 3),
            expect: Violation(|v| matches!(v, V::LabelOutOfRange { label: 3, classes: 3 })),
        },
        Mutation {
            name: "label_count",
            build: |d| invalid(d, |b| b.id_labels.as_mut().unwrap().truncate(11)),
            expect: Violation(|v| matches!(v, V::LabelCount { expected: 12, actual: 11 })),
        },
        Mutation {
            name: "logits_width",
            build: |d| invalid(d, |b| logits(b).id = EmbeddingMatrix::new(12, 4, vec![0.5; 48]).unwrap()),
            expect: Violation(|v| matches!(v, V::LogitsWidth { expected: 3, actual: 4 })),
        },
        Mutation {
            name: "logits_rows",
            build: |d| invalid(d, |b| logits(b).id = EmbeddingMatrix::new(11, 3, vec![0.5; 33]).unwrap()),
            expect: Violation(|v| matches!(v, V::LogitsRows { expected: 12, actual: 11 })),
        },
        Mutation {
            name: "logits_population",
            build: |d| invalid(d, |b| drop(logits(b).ood.pop_first())),
            expect: Violation(|v| matches!(v, V::LogitsPopulation)),
        },
        Mutation {
            name: "bad_magic",
            build: |d| edit_manifest(d, |v| v["format"] = "NPY0".into()),
            expect: Error(|e| matches!(e, BundleError::BadMagic(s) if s == "NPY0")),
        },
        Mutation {
            name: "unknown_version",
            build: |d| edit_manifest(d, |v| v["version"] = 2.into()),
            expect: Error(|e| matches!(e, BundleError::UnknownVersion(2))),
        },
        Mutation {
            name: "rows_lie",
            build: |d| edit_manifest(d, |v| entry(v, "id_images.f32")["rows"] = 13.into()),
            expect: Error(|e| matches!(e, BundleError::ShapeMismatch { rows: 13, actual: 384, .. })),
        },
        Mutation {
            name: "cols_lie",
            build: |d| edit_manifest(d, |v| entry(v, "id_prompts.f32")["cols"] = 9.into()),
            expect: Error(|e| matches!(e, BundleError::ShapeMismatch { cols: 9, .. })),
        },
        Mutation {
            name: "truncated_file",
            build: |d| {
                write_bundle(&base_bundle(), d).unwrap();
                let p = d.join("ood_prompts.f32");
                let bytes = fs::read(&p).unwrap();
                fs::write(&p, &bytes[..bytes.len() - 2]).unwrap();
            },
            expect: Error(|e| matches!(e, BundleError::ShapeMismatch { .. })),
        },
        Mutation {
            name: "flipped_bit",
            build: |d| {
                write_bundle(&base_bundle(), d).unwrap();
                let p = d.join("id_images.f32");
                let mut bytes = fs::read(&p).unwrap();
                bytes[17] ^= 0x01;
                fs::write(&p, bytes).unwrap();
            },
            expect: Error(|e| matches!(e, BundleError::Checksum { file, .. } if file == "id_images.f32")),
        },
        Mutation {
            name: "missing_matrix_file",
            build: |d| {
                write_bundle(&base_bundle(), d).unwrap();
                fs::remove_file(d.join("ood_images_000.f32")).unwrap();
            },
            expect: Error(|e| matches!(e, BundleError::MissingFile(p) if p.ends_with("ood_images_000.f32"))),
        },
        Mutation {
            name: "missing_manifest",
            build: |d| {
                write_bundle(&base_bundle(), d).unwrap();
                fs::remove_file(d.join(MANIFEST)).unwrap();
            },
            expect: Error(|e| matches!(e, BundleError::MissingFile(p) if p.ends_with(MANIFEST))),
        },
        Mutation {
            name: "malformed_manifest",
            build: |d| {
                write_bundle(&base_bundle(), d).unwrap();
                fs::write(d.join(MANIFEST), "{\"format\": \"OODB\", ").unwrap();
            },
            expect: Error(|e| matches!(e, BundleError::Json { .. })),
        },
        Mutation {
            name: "unknown_role",
            build: |d| edit_manifest(d, |v| entry(v, "ood_prompts.f32")["role"] = "text_prompts".into()),
            expect: Error(|e| matches!(e, BundleError::Manifest(s) if s.contains("unknown matrix role"))),
        },
        Mutation {
            name: "path_in_file_name",
            build: |d| edit_manifest(d, |v| entry(v, "id_prompts.f32")["file"] = "../id_prompts.f32".into()),
            expect: Error(|e| matches!(e, BundleError::Manifest(s) if s.contains("must not contain a path"))),
        },
    ]
}

/// Checks that `err` is the rejection `expect` describes.
pub fn rejected_as(err: &BundleError, expect: &Expect) -> bool {
    match (expect, err) {
        (Expect::Violation(f), BundleError::Invalid(vs)) => vs.iter().any(|v| f(&v.kind)),
        (Expect::Error(f), e) => f(e),
        _ => false,
    }
}

pub const BIN: &str = env!("CARGO_BIN_EXE_oodkit");

/// Runs the binary in `cwd`; returns (exit code, stdout, stderr).
pub fn oodkit(cwd: &Path, args: &[&str]) -> (i32, Vec<u8>, String) {
    let out = std::process::Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env_remove("OODKIT_OUT_DIR")
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn oodkit");
    (out.status.code().unwrap_or(-1), out.stdout, String::from_utf8_lossy(&out.stderr).into_owned())
}

const SWEEPS: &[(&str, &str)] = &[
    ("comparison", r#"{"kind": "comparison", "rules": ["score_id", "score_id_ood", "msp", "maxlogit", "energy", "odin"],
        "points": [{"bundle": "clean", "label": "clean"}, {"bundle": "noisy"}]}"#),
    ("severity", r#"{"kind": "severity", "synthetic": {"config": {"n_id": 200, "n_ood": 200},
        "perturb": {"target": "images", "scales": [0.0, 0.5, 1.0], "seed": 3}},
        "points": [{"bundle": "clean", "corruption": "cli", "severity": 0}, {"bundle": "noisy", "corruption": "cli", "severity": 0.5}]}"#),
    ("temperature", r#"{"kind": "temperature", "points": [{"bundle": "clean"}], "taus": [2.0, 0.001, 0.1, 0.1]}"#),
    ("variation", r#"{"kind": "prompt-variation", "synthetic": {"config": {"n_id": 150, "n_ood": 150},
        "perturb": {"target": "prompts", "scales": [0.2, 0.6, 1.0], "seed": 9}}}"#),
    ("complexity", r#"{"kind": "prompt-complexity", "points": [
        {"bundle": "clean", "ood_prompts": "short.txt"}, {"bundle": "clean", "label": "long", "ood_prompts": "long.txt"}]}"#),
];

/// Exercises every subcommand in `dir` and returns each output (stdout or
/// written file) keyed by a stable name. Panics if a command fails.
pub fn cli_scenario(dir: &Path, jobs: &str) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut outputs = std::collections::BTreeMap::new();
    let run = |args: &[&str]| {
        let mut full = vec!["--jobs", jobs];
        full.extend_from_slice(args);
        let (code, stdout, stderr) = oodkit(dir, &full);
        assert_eq!(code, 0, "oodkit {args:?} failed: {stderr}");
        stdout
    };
    fs::write(dir.join("synth.json"), r#"{"dim": 32, "k": 6, "m": 4, "n_id": 300, "n_ood": 250, "seed": 3, "logit_scale": 40.0}"#).unwrap();
    fs::write(dir.join("labels.txt"), "cat\ndog\n# comment\n\nsea lion\n").unwrap();
    fs::write(dir.join("templates.txt"), "a photo of a {label}.\na blurry photo of the {label}\n").unwrap();
    fs::write(dir.join("short.txt"), "thing\nscene\nobject\nstuff\n").unwrap();
    fs::write(dir.join("long.txt"), "a photo of an unrelated object\na random scene with nothing known\nsome other kind of thing entirely\nnot one of the known classes\n").unwrap();

    outputs.insert("synth".into(), run(&["synth", "--config", "synth.json", "--out", "clean"]));
    outputs.insert("synth.placement".into(), run(&["synth", "--seed", "8", "--dim", "16", "--k", "3", "--m", "0", "--placement", "random", "--out", "nom"]));
    outputs.insert("perturb".into(), run(&["perturb", "--bundle", "clean", "--target", "images", "--scale", "0.7", "--seed", "2", "--out", "noisy"]));
    outputs.insert("perturb.prompts".into(), run(&["perturb", "--bundle", "clean", "--target", "prompts", "--scale", "0.3", "--out", "pnoisy"]));
    outputs.insert("validate".into(), run(&["validate", "--bundle", "clean"]));
    for rule in ["score_id", "score_id_ood", "msp", "maxlogit", "energy", "odin"] {
        outputs.insert(format!("score.{rule}"), run(&["score", "--bundle", "noisy", "--rule", rule, "--tau", "0.1"]));
    }
    outputs.insert("score.lambda".into(), run(&["score", "--bundle", "clean", "--lambda", "0.5", "--out", "scores.csv"]));
    outputs.insert("score.m0".into(), run(&["score", "--bundle", "nom", "--rule", "score_id_ood"]));
    outputs.insert("metrics.bundle".into(), run(&["metrics", "--bundle", "clean", "--rule", "score_id,score_id_ood,energy,odin", "--tau", "0.01"]));
    outputs.insert("metrics.scores".into(), run(&["metrics", "--scores", "scores.csv", "--tpr-target", "0.9", "--out", "metrics.json"]));
    outputs.insert("insights".into(), run(&["insights", "--bundle", "clean", "--tau", "0.1", "--bins", "20", "--out", "ins"]));
    outputs.insert("insights.m0".into(), run(&["insights", "--bundle", "nom", "--out", "ins_m0"]));
    for (name, config) in SWEEPS {
        let file = format!("{name}.json");
        fs::write(dir.join(&file), config).unwrap();
        outputs.insert(format!("sweep.{name}"), run(&["sweep", "--config", &file, "--out", &format!("sweep_{name}")]));
    }
    outputs.insert("prompts.render".into(), run(&["prompts", "render", "--labels", "labels.txt", "--templates", "templates.txt"]));
    outputs.insert("prompts.complexity".into(), run(&["prompts", "complexity", "--file", "long.txt"]));

    for dir_name in ["clean", "nom", "noisy", "pnoisy", "ins", "ins_m0"].into_iter().map(String::from).chain(SWEEPS.iter().map(|(n, _)| format!("sweep_{n}"))) {
        let mut files: Vec<_> = fs::read_dir(dir.join(&dir_name)).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        files.sort();
        for f in files {
            outputs.insert(format!("{dir_name}/{f}"), fs::read(dir.join(&dir_name).join(&f)).unwrap());
        }
    }
    for f in ["scores.csv", "metrics.json"] {
        outputs.insert(f.into(), fs::read(dir.join(f)).unwrap());
    }
    outputs
}
