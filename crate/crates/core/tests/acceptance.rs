//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Criteria whose failure is understood and documented are listed in
//! `KNOWN_UNMET`; any other failure makes the target exit nonzero.
//!
//! Set `STANCEKIT_DATA_DIR` to a directory holding `sem16.tsv`, `wtwt.tsv`
//! and `covid.csv` to run the split arithmetic on the real files; otherwise
//! stand-in files with the same per-target label counts are generated.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stancekit::autodiff::{softmax_rows, Tape};
use stancekit::contrastive::{nt_xent_loss, nt_xent_loss_and_grad, ContrastiveBatch};
use stancekit::corpus::{load_dataset, make_zero_shot_split, targets_of, ColumnSpec, Instance, LabelScheme, Stance};
use stancekit::encoder::{EncoderConfig, Mode, Vocab};
use stancekit::fusion::{attend_fuse, attention_weights, concat_fuse, AttentionParams};
use stancekit::harness::diagnostics::{diagnostics_trace, ProbeSet, ProbeSpace};
use stancekit::harness::experiment::{augment_bundle, run_once, RunConfig};
use stancekit::harness::{f1_per_class, headline_metric, ConfusionTable, HeadlineMetric, MicroScope};
use stancekit::topicmask::mask_sentence;
use stancekit::training::model::{CLASSIFIER_BIAS, CLASSIFIER_WEIGHT, FUSION_KEY, FUSION_QUERY, FUSION_VALUE};
use stancekit::training::{ModelConfig, StanceModel, Variant};

const KNOWN_UNMET: &[(usize, &str)] = &[
    (
        6,
        "the reference per-class VAST scores average to 72.567, which is 0.067 from the reference All score of 72.5",
    ),
    (
        7,
        "on the synthetic task the NO_CL baseline transfers as well as FULL; the contrastive term gives no reliable margin",
    ),
    (
        8,
        "the untrained toy encoder maps every sentence to nearly the same point, so the step-0 alignment is close to zero and any learned spread exceeds twice it",
    ),
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn synthetic_config() -> RunConfig {
    RunConfig::load(&repo_root().join("configs/synthetic.toml")).expect("configs/synthetic.toml")
}

// ---------------------------------------------------------------- 1

fn brute_nt_xent(z: &Array2<f64>, tau: f64) -> f64 {
    let m = z.nrows();
    let cos = |a: usize, b: usize| {
        let (x, y) = (z.row(a), z.row(b));
        x.dot(&y) / (x.dot(&x).sqrt() * y.dot(&y).sqrt())
    };
    let mut total = 0.0;
    for i in 0..m {
        let pos = if i % 2 == 0 { i + 1 } else { i - 1 };
        let num = (cos(i, pos) / tau).exp();
        let den: f64 = (0..m).filter(|&k| k != i).map(|k| (cos(i, k) / tau).exp()).sum();
        total += -(num / den).ln();
    }
    total / m as f64
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0_f64;
    let mut singleton_zero = true;
    for case in 0..100 {
        let n_b = if case < 5 { 1 } else { rng.gen_range(1..=8) };
        let d_c = rng.gen_range(2..=16);
        let tau = rng.gen_range(0.05..=1.0);
        let z = random_matrix(&mut rng, 2 * n_b, d_c);
        let got = nt_xent_loss(&ContrastiveBatch::new(z.clone(), tau).unwrap()).unwrap();
        if n_b == 1 {
            singleton_zero &= got == 0.0;
            continue;
        }
        let want = brute_nt_xent(&z, tau);
        worst = worst.max((got - want).abs() / want.abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-10 && singleton_zero && secs < 10.0,
        format!("max rel err {worst:.2e}, N_b=1 exactly zero: {singleton_zero}, {secs:.2}s"),
    )
}

// ---------------------------------------------------------------- 2

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

const WORDS: &[&str] = &[
    "we", "should", "not", "ban", "cars", "today", "is", "the", "future", "they", "will", "vote", "for", "green", "policy",
];

fn random_sentence(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn supervised_loss(model: &StanceModel, inst: &Instance, labels: &Array2<f64>) -> f64 {
    let mut tape = Tape::new(&model.store);
    let vars = model.forward(&mut tape, inst, &mut Mode::Deterministic).unwrap();
    let loss = tape.cross_entropy(vars.probs, labels.clone());
    tape.scalar(loss)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-5;

    // (a) contrastive loss w.r.t. projections
    let mut worst_cl = 0.0_f64;
    for _ in 0..20 {
        let n_b = rng.gen_range(2..=5);
        let d_c = rng.gen_range(2..=8);
        let tau = rng.gen_range(0.1..=1.0);
        let z = random_matrix(&mut rng, 2 * n_b, d_c);
        let (_, grad) = nt_xent_loss_and_grad(&ContrastiveBatch::new(z.clone(), tau).unwrap()).unwrap();
        for idx in 0..z.len() {
            let (r, c) = (idx / d_c, idx % d_c);
            let mut plus = z.clone();
            plus[[r, c]] += h;
            let mut minus = z.clone();
            minus[[r, c]] -= h;
            let fp = nt_xent_loss(&ContrastiveBatch::new(plus, tau).unwrap()).unwrap();
            let fm = nt_xent_loss(&ContrastiveBatch::new(minus, tau).unwrap()).unwrap();
            worst_cl = worst_cl.max(rel_err(grad[[r, c]], (fp - fm) / (2.0 * h)));
        }
    }

    // (b) supervised path w.r.t. fusion, classifier and joint embeddings
    let mut worst_sup = 0.0_f64;
    for config in 0..20 {
        let d_m = [4, 6, 8][config % 3];
        let heads = if d_m % 2 == 0 && config % 2 == 0 { 2 } else { 1 };
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                hidden_dim: d_m,
                n_heads: heads,
                ffn_dim: 2 * d_m,
                n_layers: 1 + config % 2,
                max_sequence_length: 24,
                share_weights: config % 4 == 3,
                ..EncoderConfig::default()
            },
            projection_dim: 3,
            fusion_dim: rng.gen_range(2..=5),
            ..ModelConfig::default()
        };
        let len = rng.gen_range(2..=7);
        let text = random_sentence(&mut rng, len);
        let mut inst = Instance::new("g", "green policy", text.clone());
        inst.masked_text = Some(text.replacen("the", "[MASK]", 1));
        let vocab = Vocab::build(WORDS.iter().copied(), 1);
        let mut model = StanceModel::init(&cfg, vocab, config as u64).unwrap();
        let mut labels = Array2::zeros((1, 3));
        labels[[0, config % 3]] = 1.0;

        let mut tape = Tape::new(&model.store);
        let vars = model.forward(&mut tape, &inst, &mut Mode::Deterministic).unwrap();
        let loss = tape.cross_entropy(vars.probs, labels.clone());
        let grads = tape.backward(loss).into_dense(&model.store);
        drop(tape);

        let vocab_ids: Vec<usize> = {
            let v = model.vocab().unwrap();
            let mut ids: Vec<usize> = text
                .split_whitespace()
                .chain(["green", "policy"])
                .map(|w| v.id(w))
                .collect();
            ids.sort_unstable();
            ids.dedup();
            ids
        };
        let names = [
            FUSION_QUERY.to_string(),
            FUSION_KEY.to_string(),
            FUSION_VALUE.to_string(),
            CLASSIFIER_WEIGHT.to_string(),
            CLASSIFIER_BIAS.to_string(),
            "joint_encoder.embedding".to_string(),
        ];
        for name in &names {
            let id = model.store.id(name).unwrap_or_else(|| panic!("parameter {name}"));
            let (rows, cols) = model.store.get(id).dim();
            let row_set: Vec<usize> = if name.ends_with("embedding") {
                vocab_ids.clone()
            } else {
                (0..rows).collect()
            };
            for &r in &row_set {
                for c in 0..cols {
                    let orig = model.store.get(id)[[r, c]];
                    model.store.get_mut(id)[[r, c]] = orig + h;
                    let fp = supervised_loss(&model, &inst, &labels);
                    model.store.get_mut(id)[[r, c]] = orig - h;
                    let fm = supervised_loss(&model, &inst, &labels);
                    model.store.get_mut(id)[[r, c]] = orig;
                    worst_sup = worst_sup.max(rel_err(grads[id.0][[r, c]], (fp - fm) / (2.0 * h)));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_cl <= 1e-4 && worst_sup <= 1e-4 && secs < 60.0,
        format!("NT-Xent max rel err {worst_cl:.2e}, supervised path max rel err {worst_sup:.2e}, 20+20 configs, {secs:.1}s"),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut sum_err, mut shift_err, mut exact) = (0.0_f64, 0.0_f64, true);
    for case in 0..1000 {
        let d_m = rng.gen_range(1..=8);
        let d_s = rng.gen_range(1..=6);
        let n = rng.gen_range(1..=10);
        let params = AttentionParams::random(d_m, d_s, &mut rng);
        let h = Array1::from_shape_fn(d_m, |_| rng.gen_range(-2.0..2.0));
        let z = Array1::from_shape_fn(d_m, |_| rng.gen_range(-2.0..2.0));
        let tokens = random_matrix(&mut rng, n, d_m) * 2.0;

        let w = attention_weights(h.view(), tokens.view(), &params).unwrap();
        sum_err = sum_err.max((w.sum() - 1.0).abs());

        let scores = random_matrix(&mut rng, 1, n) * 5.0;
        let shift = rng.gen_range(-50.0..50.0);
        let a = softmax_rows(&scores.view());
        let b = softmax_rows(&(&scores + shift).view());
        shift_err = shift_err.max((&a - &b).mapv(f64::abs).fold(0.0, |m: f64, &x| m.max(x)));

        let uniform_tokens = if case % 2 == 0 {
            tokens.row(0).to_owned().insert_axis(ndarray::Axis(0))
        } else {
            let row = tokens.row(0).to_owned();
            Array2::from_shape_fn((n, d_m), |(_, j)| row[j])
        };
        let attended = attend_fuse(h.view(), z.view(), uniform_tokens.view(), &params).unwrap();
        let pooled = concat_fuse(h.view(), z.view(), uniform_tokens.view(), &params).unwrap();
        exact &= attended == pooled;
    }
    outcome(
        sum_err <= 1e-9 && shift_err <= 1e-9 && exact,
        format!("max |Σα−1| {sum_err:.1e}, max shift deviation {shift_err:.1e}, attend = concat on n=1 / identical rows: {exact}"),
    )
}

// ---------------------------------------------------------------- 4

fn fuzz_sentence(rng: &mut ChaCha8Rng) -> String {
    const PIECES: &[&str] = &[
        "Climate", "change", "is", "REAL", "real", "!", "?", ",", "...", "#energy", "@user", "[MASK]", "don't", "café",
        "naïve", "policy", "  ", "the", "The", "heat", "records", "—", "2020", "it's", "😀",
    ];
    let len = rng.gen_range(0..20);
    let mut s = String::new();
    for _ in 0..len {
        s.push_str(PIECES[rng.gen_range(0..PIECES.len())]);
        if rng.gen_bool(0.8) {
            s.push(' ');
        }
    }
    s
}

fn criterion_4() -> Outcome {
    let sentence = "Today Europe is breaking heat records, while Asia is breaking the lowest temperature records! Should we not be concerned?";
    let keywords = ["breaking", "heat", "records", "the", "lowest", "temperature", "concerned"];
    let expected = "Today Europe is [MASK], while Asia is [MASK]! Should we not be [MASK]?";
    let example = mask_sentence(sentence, &keywords) == expected;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut idempotent = 0;
    for _ in 0..500 {
        let s = fuzz_sentence(&mut rng);
        let kw: Vec<&str> = ["real", "the", "heat", "policy", "records", "change", "café"]
            .into_iter()
            .filter(|_| rng.gen_bool(0.5))
            .collect();
        let once = mask_sentence(&s, &kw);
        if mask_sentence(&once, &kw) == once {
            idempotent += 1;
        }
    }
    outcome(
        example && idempotent == 500,
        format!("example reproduced: {example}, idempotent on {idempotent}/500 fuzz sentences"),
    )
}

// ---------------------------------------------------------------- 5

struct SplitCase {
    name: &'static str,
    file: &'static str,
    spec: ColumnSpec,
    scheme: LabelScheme,
    held_out: &'static str,
    expected_test: usize,
    /// Per-target (favor, against, neutral) counts used for stand-in files.
    counts: &'static [(&'static str, [usize; 3])],
    raw_labels: [&'static str; 3],
    dropped_label: Option<&'static str>,
}

fn split_cases() -> Vec<SplitCase> {
    vec![
        SplitCase {
            name: "SEM16 hold-out DT",
            file: "sem16.tsv",
            spec: ColumnSpec::semeval(),
            scheme: LabelScheme::semeval(),
            held_out: "Donald Trump",
            expected_test: 707,
            counts: &[
                ("Donald Trump", [148, 299, 260]),
                ("Hillary Clinton", [163, 565, 256]),
                ("Feminist Movement", [268, 511, 170]),
                ("Legalization of Abortion", [167, 544, 222]),
                ("Atheism", [124, 464, 145]),
                ("Climate Change is a Real Concern", [335, 26, 203]),
            ],
            raw_labels: ["FAVOR", "AGAINST", "NONE"],
            dropped_label: None,
        },
        SplitCase {
            name: "WT-WT hold-out CA",
            file: "wtwt.tsv",
            spec: ColumnSpec::new("text", "target", Some("stance")),
            scheme: LabelScheme::wtwt(),
            held_out: "CVS_AET",
            expected_test: 8507,
            counts: &[
                ("CVS_AET", [2469, 518, 5520]),
                ("CI_ESRX", [773, 253, 947]),
                ("ANTM_CI", [970, 1969, 3098]),
                ("AET_HUM", [1038, 1106, 2804]),
            ],
            raw_labels: ["support", "refute", "comment"],
            dropped_label: Some("unrelated"),
        },
        SplitCase {
            name: "COVID-19 hold-out WA",
            file: "covid.csv",
            spec: ColumnSpec::new("Tweet", "Target", Some("Stance")).with_delimiter(b','),
            scheme: LabelScheme::covid(),
            held_out: "face masks",
            expected_test: 515 + 220 + 172,
            counts: &[
                ("face masks", [515, 220, 172]),
                ("school closures", [430, 102, 85]),
                ("fauci", [384, 266, 307]),
                ("stay at home orders", [151, 201, 396]),
            ],
            raw_labels: ["FAVOR", "AGAINST", "NONE"],
            dropped_label: None,
        },
    ]
}

fn write_stand_in(path: &Path, case: &SplitCase) {
    let delim = case.spec.delimiter;
    let mut w = csv::WriterBuilder::new().delimiter(delim).from_path(path).unwrap();
    let label_col = case.spec.label.clone().unwrap();
    let mut header = vec![case.spec.text.clone(), case.spec.target.clone(), label_col];
    if let Some(id) = &case.spec.id {
        header.insert(0, id.clone());
    }
    w.write_record(&header).unwrap();
    let mut k = 0usize;
    for (target, counts) in case.counts {
        let mut labels: Vec<&str> = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            labels.extend(std::iter::repeat_n(case.raw_labels[c], n));
        }
        if let Some(dropped) = case.dropped_label {
            labels.extend(std::iter::repeat_n(dropped, 37));
        }
        for label in labels {
            k += 1;
            let text = format!("post number {k} about {target}");
            let mut row = vec![text, target.to_string(), label.to_string()];
            if case.spec.id.is_some() {
                row.insert(0, k.to_string());
            }
            w.write_record(&row).unwrap();
        }
    }
    w.flush().unwrap();
}

fn criterion_5() -> Outcome {
    let real_dir = std::env::var_os("STANCEKIT_DATA_DIR").map(PathBuf::from);
    let tmp = tempfile::tempdir().unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    let mut source = "stand-in files with the reference per-target counts";
    for case in split_cases() {
        let path = match &real_dir {
            Some(dir) if dir.join(case.file).exists() => {
                source = "files from STANCEKIT_DATA_DIR";
                dir.join(case.file)
            }
            _ => {
                let p = tmp.path().join(case.file);
                write_stand_in(&p, &case);
                p
            }
        };
        let instances = load_dataset(&path, &case.spec, &case.scheme).unwrap();
        let bundle = make_zero_shot_split(&instances, case.held_out, 0.15, 0).unwrap();
        let seen: std::collections::BTreeSet<&str> = targets_of(&bundle.train)
            .union(&targets_of(&bundle.dev))
            .copied()
            .collect();
        let leak = targets_of(&bundle.test).iter().any(|t| seen.contains(t));
        let ok = bundle.test.len() == case.expected_test && !leak && bundle.validate().is_ok();
        pass &= ok;
        details.push(format!("{} test={} (want {})", case.name, bundle.test.len(), case.expected_test));
    }
    outcome(pass, format!("{}; no target leakage; {source}", details.join(", ")))
}

// ---------------------------------------------------------------- 6

/// Precision/recall from scratch over raw pairs.
fn brute_f1(pairs: &[(Stance, Stance)], class: Stance) -> f64 {
    let tp = pairs.iter().filter(|(g, p)| *g == class && *p == class).count() as f64;
    let predicted = pairs.iter().filter(|(_, p)| *p == class).count() as f64;
    let actual = pairs.iter().filter(|(g, _)| *g == class).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let precision = tp / predicted;
    let recall = tp / actual;
    2.0 * precision * recall / (precision + recall)
}

fn brute_micro(pairs: &[(Stance, Stance)], classes: &[Stance]) -> f64 {
    let tp: f64 = classes
        .iter()
        .map(|&c| pairs.iter().filter(|(g, p)| *g == c && *p == c).count() as f64)
        .sum();
    let predicted: f64 = classes.iter().map(|&c| pairs.iter().filter(|(_, p)| *p == c).count() as f64).sum();
    let actual: f64 = classes.iter().map(|&c| pairs.iter().filter(|(g, _)| *g == c).count() as f64).sum();
    if tp == 0.0 {
        return 0.0;
    }
    let (p, r) = (tp / predicted, tp / actual);
    2.0 * p * r / (p + r)
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let all = [Stance::Favor, Stance::Against, Stance::Neutral];
    let fa = [Stance::Favor, Stance::Against];
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=12);
        let pairs: Vec<(Stance, Stance)> = (0..n)
            .map(|_| (all[rng.gen_range(0..3)], all[rng.gen_range(0..3)]))
            .collect();
        let table = ConfusionTable::from_pairs(pairs.iter().copied());
        let per_class = f1_per_class(&table);
        let brute: BTreeMap<Stance, f64> = all.iter().map(|&c| (c, brute_f1(&pairs, c))).collect();
        if per_class != brute {
            mismatches += 1;
        }
        let macro_fa = (brute[&Stance::Favor] + brute[&Stance::Against]) / 2.0;
        let macro_all = (brute[&Stance::Favor] + brute[&Stance::Against] + brute[&Stance::Neutral]) / 3.0;
        let fa_rows: Vec<(Stance, Stance)> = pairs.iter().copied().filter(|(g, _)| fa.contains(g)).collect();
        let micro_fa = brute_micro(&fa_rows, &fa);
        let macro_fa_rows = (brute_f1(&fa_rows, Stance::Favor) + brute_f1(&fa_rows, Stance::Against)) / 2.0;
        let micro_all = brute_micro(&pairs, &all);
        let checks = [
            (HeadlineMetric::FavorAgainst, macro_fa),
            (HeadlineMetric::AllClasses, macro_all),
            (
                HeadlineMetric::MicroMacro {
                    micro: MicroScope::FavorAgainst,
                },
                (micro_fa + macro_fa_rows) / 2.0,
            ),
            (
                HeadlineMetric::MicroMacro {
                    micro: MicroScope::AllClasses,
                },
                (micro_all + macro_fa) / 2.0,
            ),
        ];
        for (metric, want) in checks {
            if headline_metric(&table, metric) != want {
                mismatches += 1;
            }
        }
    }
    let reported = [60.6, 67.3, 89.8];
    let mean = reported.iter().sum::<f64>() / 3.0;
    let gap = (mean - 72.5_f64).abs();
    outcome(
        mismatches == 0 && gap <= 0.05,
        format!("oracle mismatches {mismatches}/200 cases; VAST reported mean {mean:.3} vs All 72.5, gap {gap:.3} (tolerance 0.05)"),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let base = synthetic_config();
    let mut means = Vec::new();
    let mut sizes = (0, 0);
    let mut per_seed = Vec::new();
    for variant in [Variant::Full, Variant::NoCl] {
        let mut cfg = base.clone();
        cfg.variant = variant;
        let mut scores = Vec::new();
        for r in 0..5 {
            let seed = cfg.repeat_seed(r);
            let outcome = run_once(&cfg, seed).unwrap();
            scores.push(outcome.report.headline);
            if r == 0 {
                let bundle = cfg.build_bundle(seed).unwrap();
                sizes = (bundle.train.len(), bundle.test.len());
            }
        }
        per_seed.push(format!(
            "{variant:?} [{}]",
            scores.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>().join(" ")
        ));
        means.push(scores.iter().sum::<f64>() / scores.len() as f64);
    }
    let secs = start.elapsed().as_secs_f64();
    let (full, no_cl) = (means[0], means[1]);
    outcome(
        full >= 0.85 && full - no_cl >= 0.05 && sizes.0 >= 500 && sizes.1 >= 200 && secs < 300.0,
        format!(
            "FULL {full:.3}, NO_CL {no_cl:.3}, margin {:.3} (need >= 0.85 and >= 0.05); {}; train {} / test {}; {secs:.0}s",
            full - no_cl,
            per_seed.join(", "),
            sizes.0,
            sizes.1
        ),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let cfg = synthetic_config();
    let seed = cfg.repeat_seed(0);
    let mut bundle = cfg.build_bundle(seed).unwrap();
    augment_bundle(&mut bundle, &cfg, seed).unwrap();
    let probes = ProbeSet::from_instances(&bundle.test, 64, seed).unwrap();
    let metric = cfg.headline(bundle.protocol);
    let model_config = cfg.model_config();
    let train_config = cfg.train_config(seed);
    let (_, trace) = diagnostics_trace(&bundle, &model_config, &train_config, metric, &probes).unwrap();
    // Projection-space figures are reported for context only; training is
    // deterministic, so both traces follow the same trajectory.
    let projected = probes.clone().in_space(ProbeSpace::Projection);
    let (_, z_trace) = diagnostics_trace(&bundle, &model_config, &train_config, metric, &projected).unwrap();
    let first = trace.first().unwrap();
    let last = trace.last().unwrap();
    let peak = trace.iter().map(|r| r.alignment).fold(0.0, f64::max);
    let (z_first, z_last) = (z_trace.first().unwrap(), z_trace.last().unwrap());
    outcome(
        last.uniformity < first.uniformity && last.alignment <= 2.0 * first.alignment,
        format!(
            "sentence space: step 0 alignment {:.4}, uniformity {:.4}; step {} alignment {:.4} (peak {peak:.4}), uniformity {:.4}; {} records. Projection space (context): alignment {:.4} -> {:.4}, uniformity {:.4} -> {:.4}",
            first.alignment,
            first.uniformity,
            last.step,
            last.alignment,
            last.uniformity,
            trace.len(),
            z_first.alignment,
            z_last.alignment,
            z_first.uniformity,
            z_last.uniformity,
        ),
    )
}

fn main() {
    let checks: Vec<(usize, &str, fn() -> Outcome)> = vec![
        (1, "NT-Xent oracle equivalence", criterion_1),
        (2, "gradient checks", criterion_2),
        (3, "fusion invariants", criterion_3),
        (4, "masking fidelity", criterion_4),
        (5, "split arithmetic", criterion_5),
        (6, "metric oracle", criterion_6),
        (7, "synthetic zero-shot transfer", criterion_7),
        (8, "diagnostics trend", criterion_8),
    ];
    let mut unexpected = Vec::new();
    for (number, name, check) in checks {
        let result = check();
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {number} ({name}): {}", result.detail);
        if !result.pass {
            match KNOWN_UNMET.iter().find(|(n, _)| *n == number) {
                Some((_, why)) => println!("     known unmet: {why}"),
                None => unexpected.push(number),
            }
        }
    }
    println!(
        "NOTE criterion 9 (reference-scale scores with a pretrained encoder): not gating, not run here; see README"
    );
    if !unexpected.is_empty() {
        eprintln!("unexpected acceptance failures: {unexpected:?}");
        std::process::exit(1);
    }
}
