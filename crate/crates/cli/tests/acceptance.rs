//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the libtest harness so every line prints.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ddr_core::analysis::{ecdf, pearson, separation_emd};
use ddr_core::corpus::load_dataset;
use ddr_core::ddr::ddr_score;
use ddr_core::metric::{chordal_distance, cosine_similarity};
use ddr_core::perturbation::{generate_suite, write_variants_jsonl};
use ddr_core::transport::{
    emd_1d_unit_mass, solve_emd, GroundDistanceMatrix, Signature, FEASIBILITY_TOLERANCE,
};
use ddr_core::{EmbeddingPair64, EmbeddingVector64, Lexicon, ScoreError, TokenEmbeddingSequence64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(elapsed: Duration, budget: Duration) -> Result<(), String> {
    check(elapsed < budget, || {
        format!("took {elapsed:.2?}, budget {budget:?}")
    })
}

// ---------------------------------------------------------------------------

fn random_small_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let (m, n) = (rng.random_range(1..=4), rng.random_range(1..=4));
    let weight = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.15) {
            0.0
        } else {
            rng.random_range(0.01..3.0)
        }
    };
    let mut p: Vec<f64> = (0..m).map(|_| weight(rng)).collect();
    let mut q: Vec<f64> = (0..n).map(|_| weight(rng)).collect();
    p[0] += 0.1;
    q[0] += 0.1;
    if rng.random_bool(0.4) {
        let (pt, qt): (f64, f64) = (p.iter().sum(), q.iter().sum());
        q.iter_mut().for_each(|w| *w *= pt / qt);
    }
    let cost = (0..m)
        .map(|_| (0..n).map(|_| rng.random_range(0.0..10.0)).collect())
        .collect();
    (p, q, cost)
}

fn emd_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xE3D);
    let (mut small, mut worst_small) = (0, 0.0f64);
    for case in 0..1200 {
        let (p, q, cost) = random_small_instance(&mut rng);
        let ps = Signature::new((0..p.len()).collect(), p.clone()).unwrap();
        let qs = Signature::new((0..q.len()).collect(), q.clone()).unwrap();
        let d = GroundDistanceMatrix::from_fn(&ps, &qs, |&i, &j| cost[i][j]).unwrap();
        let s = solve_emd(&ps, &qs, &d).map_err(|e| format!("case {case}: {e}"))?;
        check(s.flow.is_feasible(&ps, &qs, FEASIBILITY_TOLERANCE), || {
            format!("case {case}: infeasible flow")
        })?;
        let err = (s.value - oracles::emd_by_vertex_enumeration(&p, &q, &cost)).abs();
        check(err <= 1e-9, || {
            format!("case {case}: |solver - enumeration| = {err:e}")
        })?;
        worst_small = worst_small.max(err);
        small += 1;
    }
    let (mut one_d, mut unequal, mut worst_1d) = (0, 0, 0.0f64);
    for case in 0..1200 {
        let n = rng.random_range(1..=50);
        let m = if rng.random_bool(0.3) {
            n
        } else {
            rng.random_range(1..=50)
        };
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (pa, pb) = (
            Signature::uniform(a.clone()).unwrap(),
            Signature::uniform(b.clone()).unwrap(),
        );
        let d = GroundDistanceMatrix::from_fn(&pa, &pb, |x, y| (x - y).abs()).unwrap();
        let general = solve_emd(&pa, &pb, &d)
            .map_err(|e| format!("1-D case {case}: {e}"))?
            .value;
        let closed = emd_1d_unit_mass(&a, &b).map_err(|e| format!("1-D case {case}: {e}"))?;
        let err = (general - closed).abs();
        check(err <= 1e-9, || {
            format!("1-D case {case} ({n} vs {m}): diff {err:e}")
        })?;
        worst_1d = worst_1d.max(err);
        one_d += 1;
        unequal += usize::from(n != m);
    }
    let elapsed = start.elapsed();
    within_budget(elapsed, Duration::from_secs(60))?;
    Ok(format!(
        "{small} small instances (max err {worst_small:.1e}), {one_d} 1-D instances, {unequal} of unequal size (max err {worst_1d:.1e}), tol 1e-9, {elapsed:.2?}"
    ))
}

// ---------------------------------------------------------------------------

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().any(|&x| x != 0.0) {
            return v;
        }
    }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn ev(v: Vec<f64>) -> EmbeddingVector64 {
    EmbeddingVector64::new(v).unwrap()
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3E7);
    let (mut worst_cos, mut worst_euc) = (0.0f64, 0.0f64);
    for case in 0..10_000 {
        let dim = rng.random_range(2..=64);
        let (u, v) = (random_vector(&mut rng, dim), random_vector(&mut rng, dim));
        let d = chordal_distance(&ev(u.clone()), &ev(v.clone())).map_err(|e| e.to_string())?;
        let cos = cosine_similarity(&ev(u.clone()), &ev(v.clone())).map_err(|e| e.to_string())?;
        let via_cos = (2.0 * (1.0 - cos)).sqrt();
        let via_euc = euclid(&normalized(&u), &normalized(&v));
        let (ec, ee) = ((d - via_cos).abs(), (d - via_euc).abs());
        check(ec <= 1e-12, || {
            format!("pair {case}: chordal {d} vs sqrt(2(1-cos)) {via_cos}")
        })?;
        check(ee <= 1e-12, || {
            format!("pair {case}: chordal {d} vs normalized euclidean {via_euc}")
        })?;
        worst_cos = worst_cos.max(ec);
        worst_euc = worst_euc.max(ee);
    }
    let mut worst_slack = f64::NEG_INFINITY;
    for case in 0..10_000 {
        let dim = rng.random_range(2..=64);
        let [a, b, c] = [0; 3].map(|_| ev(normalized(&random_vector(&mut rng, dim))));
        let ac = chordal_distance(&a, &c).unwrap();
        let ab = chordal_distance(&a, &b).unwrap();
        let bc = chordal_distance(&b, &c).unwrap();
        let slack = ac - (ab + bc);
        check(slack <= 1e-12, || {
            format!("triple {case}: d(a,c) {ac} > d(a,b) + d(b,c) {}", ab + bc)
        })?;
        worst_slack = worst_slack.max(slack);
    }
    Ok(format!(
        "10000 pairs (max err vs cosine form {worst_cos:.1e}, vs normalized euclidean {worst_euc:.1e}), 10000 unit triples (max excess {worst_slack:.1e}), tol 1e-12"
    ))
}

// ---------------------------------------------------------------------------

fn sequence(rows: Vec<Vec<f64>>) -> TokenEmbeddingSequence64 {
    TokenEmbeddingSequence64::new(rows.into_iter().map(ev).collect()).unwrap()
}

fn pair(id: &str, pre: Vec<Vec<f64>>, post: Vec<Vec<f64>>, eos: Vec<f64>) -> EmbeddingPair64 {
    EmbeddingPair64::new(id, sequence(pre), sequence(post), ev(eos), "synthetic").unwrap()
}

fn ddr_invariants() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xDD2);
    let mut worst_scale = 0.0f64;
    let mut n = 0;
    for case in 0..1500 {
        let tokens = rng.random_range(1..=12);
        let dim = rng.random_range(2..=24);
        let rows = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..tokens).map(|_| random_vector(rng, dim)).collect()
        };
        let (pre_a, pre_b) = (rows(&mut rng), rows(&mut rng));
        let (post_a, post_b) = (rows(&mut rng), rows(&mut rng));
        let (eos_a, eos_b) = (random_vector(&mut rng, dim), random_vector(&mut rng, dim));

        // Identity transform: post equals pre.
        let ia = pair("a", pre_a.clone(), pre_a.clone(), eos_a.clone());
        let ib = pair("b", pre_b.clone(), pre_b.clone(), eos_b.clone());
        let id = ddr_score(&ia, &ib)
            .map_err(|e| format!("case {case}: {e}"))?
            .value;
        check(id == 1.0, || {
            format!("case {case}: identity transform gives {id}")
        })?;

        let a = pair("a", pre_a.clone(), post_a.clone(), eos_a.clone());
        let b = pair("b", pre_b.clone(), post_b.clone(), eos_b.clone());
        let ab = ddr_score(&a, &b)
            .map_err(|e| format!("case {case}: {e}"))?
            .value;
        let ba = ddr_score(&b, &a)
            .map_err(|e| format!("case {case}: {e}"))?
            .value;
        check(ab.to_bits() == ba.to_bits(), || {
            format!("case {case}: asymmetric {ab} vs {ba}")
        })?;

        // Every vector rescaled by its own positive factor.
        let mut rescale = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
            rows.iter()
                .map(|r| {
                    let s = 10f64.powf(rng.random_range(-3.0..3.0));
                    r.iter().map(|x| x * s).collect()
                })
                .collect()
        };
        let sa = pair("a", rescale(&pre_a), rescale(&post_a), eos_a.clone());
        let sb = pair("b", rescale(&pre_b), rescale(&post_b), eos_b.clone());
        let scaled = ddr_score(&sa, &sb)
            .map_err(|e| format!("case {case}: {e}"))?
            .value;
        let err = (scaled - ab).abs() / ab.abs().max(1.0);
        check(err <= 1e-12, || {
            format!("case {case}: rescaling moved DDR {ab} -> {scaled}")
        })?;
        worst_scale = worst_scale.max(err);

        // Same pre sequence, different post: d_in = 0.
        let same = pair("c", pre_a.clone(), post_b.clone(), eos_b.clone());
        match ddr_score(&a, &same) {
            Err(ScoreError::IdenticalInputs) => {}
            other => return Err(format!("case {case}: d_in = 0 gave {other:?}")),
        }
        n += 1;
    }
    let elapsed = start.elapsed();
    within_budget(elapsed, Duration::from_secs(10))?;
    Ok(format!(
        "{n} random pairs: identity exactly 1, symmetry bitwise, rescaling max rel err {worst_scale:.1e} (tol 1e-12), d_in = 0 -> IdenticalInputs, {elapsed:.2?}"
    ))
}

// ---------------------------------------------------------------------------

fn perturbation_contracts() -> Outcome {
    let excerpts = load_dataset(&fixtures().join("dataset.jsonl")).map_err(|e| e.to_string())?;
    let lex = Lexicon::load(
        &fixtures().join("lexicon.tsv"),
        &fixtures().join("vocab.txt"),
    )
    .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut variants_checked = 0;
    for seed in 0..100u64 {
        let mut runs = Vec::new();
        for run in 0..2 {
            let mut all = Vec::new();
            for e in &excerpts {
                let suite = generate_suite(e, &lex, seed)
                    .map_err(|err| format!("seed {seed} {}: {err}", e.id))?;
                if run == 0 {
                    for v in &suite {
                        check(v.word_count() == e.word_count(), || {
                            format!(
                                "seed {seed} {}: word count {} -> {}",
                                e.id,
                                e.word_count(),
                                v.word_count()
                            )
                        })?;
                        let changed = e
                            .words()
                            .iter()
                            .zip(v.text.split_whitespace())
                            .filter(|(a, b)| a.as_str() != *b)
                            .count();
                        let depth = usize::from(v.depth);
                        check(
                            changed == depth && v.replaced_positions.len() == depth,
                            || {
                                format!(
                                    "seed {seed} {} depth {}: {changed} words differ",
                                    e.id, v.depth
                                )
                            },
                        )?;
                        variants_checked += 1;
                    }
                }
                all.extend(suite);
            }
            let path = dir.path().join(format!("run{run}.jsonl"));
            write_variants_jsonl(&path, &all).map_err(|e| e.to_string())?;
            runs.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        }
        check(runs[0] == runs[1], || {
            format!("seed {seed}: two runs differ")
        })?;
    }
    Ok(format!(
        "{} excerpts x 100 seeds, {variants_checked} variants: word count kept, exactly depth positions replaced, byte-identical reruns",
        excerpts.len()
    ))
}

// ---------------------------------------------------------------------------

fn ddrbench(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ddrbench"))
        .args(args)
        .env_remove("DDRBENCH_CONFIG")
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!(
            "ddrbench {args:?} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn score_fixture(out: &Path, extra: &[&str]) -> Result<Vec<u8>, String> {
    let f = fixtures();
    let paths = ["dataset.jsonl", "lexicon.tsv", "vocab.txt", "corpus.ddrc"]
        .map(|p| f.join(p).display().to_string());
    let out_s = out.display().to_string();
    let mut args = vec![
        "score",
        "--dataset",
        &paths[0],
        "--lexicon",
        &paths[1],
        "--vocab",
        &paths[2],
        "--corpus",
        &paths[3],
        "--out",
        &out_s,
        "--seed",
        "0",
    ];
    args.extend_from_slice(extra);
    ddrbench(&args)?;
    std::fs::read(out.join("scores.csv")).map_err(|e| e.to_string())
}

fn pipeline_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = score_fixture(&dir.path().join("a"), &[])?;
    let second = score_fixture(&dir.path().join("b"), &[])?;
    let serial = score_fixture(&dir.path().join("c"), &["--concurrency", "1"])?;
    check(first == second, || "two runs with seed 0 differ".into())?;
    check(first == serial, || {
        "concurrency 1 differs from the default".into()
    })?;
    let rows = first.iter().filter(|&&b| b == b'\n').count() - 1;
    Ok(format!("score x3 on fixtures/corpus.ddrc (seed 0; concurrency 4, 4, 1): {rows} rows, byte-identical"))
}

// ---------------------------------------------------------------------------

/// Values produced by the full pipeline on the fixture corpus when it was
/// built (seed 0, default methods and depths). Compared exactly.
struct Pinned {
    method: &'static str,
    depth: u64,
    pearson_r: f64,
    emd_separation: f64,
    synonym_median: f64,
    random_median: f64,
}

const PINNED: [Pinned; 6] = [
    Pinned {
        method: "ddr",
        depth: 1,
        pearson_r: 0.7629326258566387,
        emd_separation: 0.025828612799426078,
        synonym_median: 1.403082388336466,
        random_median: 1.4387883040888232,
    },
    Pinned {
        method: "ddr",
        depth: 2,
        pearson_r: 0.5455653185859387,
        emd_separation: 0.0823582308788939,
        synonym_median: 1.721875951180558,
        random_median: 1.705737717934246,
    },
    Pinned {
        method: "ddr",
        depth: 3,
        pearson_r: 0.289697833825644,
        emd_separation: 0.2131076169991617,
        synonym_median: 1.75694424869247,
        random_median: 1.5476151926131743,
    },
    Pinned {
        method: "centroid_cosine",
        depth: 1,
        pearson_r: 0.29645852810054063,
        emd_separation: 0.00033938208997173676,
        synonym_median: 0.9996394279454275,
        random_median: 0.9993119083721522,
    },
    Pinned {
        method: "centroid_cosine",
        depth: 2,
        pearson_r: 0.5892956508920508,
        emd_separation: 0.000500352379739512,
        synonym_median: 0.9995052201496192,
        random_median: 0.999002955603838,
    },
    Pinned {
        method: "centroid_cosine",
        depth: 3,
        pearson_r: 0.5988665201529694,
        emd_separation: 0.0007473087856880832,
        synonym_median: 0.9992809348361826,
        random_median: 0.9986182169444666,
    },
];

fn direction_of_effect() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    score_fixture(dir.path(), &[])?;
    let out = dir.path().display().to_string();
    ddrbench(&["analyze", "--out", &out])?;
    let text = std::fs::read_to_string(dir.path().join("report/report.json"))
        .map_err(|e| e.to_string())?;
    let report: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let summaries = report["summaries"]
        .as_array()
        .ok_or("report has no summaries")?;
    let get = |method: &str, depth: u64| {
        summaries
            .iter()
            .find(|s| s["method"] == method && s["depth"] == depth)
            .ok_or_else(|| format!("no summary for {method} depth {depth}"))
    };
    let num = |s: &serde_json::Value, k: &str| s[k].as_f64().ok_or_else(|| format!("{k} missing"));

    for p in &PINNED {
        let s = get(p.method, p.depth)?;
        for (k, want) in [
            ("pearson_r", p.pearson_r),
            ("emd_separation", p.emd_separation),
            ("synonym_median", p.synonym_median),
            ("random_median", p.random_median),
        ] {
            let got = num(s, k)?;
            check(got.to_bits() == want.to_bits(), || {
                format!(
                    "pinned {} depth {} {k}: got {got:?}, pinned {want:?}",
                    p.method, p.depth
                )
            })?;
        }
    }

    let mut failed = Vec::new();
    let mut notes = Vec::new();
    for depth in 1..=3 {
        let s = get("ddr", depth)?;
        let (syn, rand) = (num(s, "synonym_median")?, num(s, "random_median")?);
        notes.push(format!("d{depth} {syn:.4} vs {rand:.4}"));
        if syn <= rand {
            failed.push(format!(
                "(a) depth {depth}: synonym median {syn:.6} <= random median {rand:.6}"
            ));
        }
    }
    let (e1, e3) = (
        num(get("ddr", 1)?, "emd_separation")?,
        num(get("ddr", 3)?, "emd_separation")?,
    );
    if e1 <= e3 {
        failed.push(format!(
            "(b) DDR separation depth 1 {e1:.4e} <= depth 3 {e3:.4e}"
        ));
    }
    let (rd, rc) = (
        num(get("ddr", 1)?, "pearson_r")?,
        num(get("centroid_cosine", 1)?, "pearson_r")?,
    );
    if rd >= rc {
        failed.push(format!(
            "(c) Pearson ddr depth 1 {rd:.4} >= centroid depth 1 {rc:.4}"
        ));
    }
    let elapsed = start.elapsed();
    within_budget(elapsed, Duration::from_secs(300))?;
    if failed.is_empty() {
        Ok(format!(
            "pinned values exact; (a) medians {}; (b) separation {e1:.4e} > {e3:.4e}; (c) r {rd:.4} < {rc:.4}; {elapsed:.2?}",
            notes.join(", ")
        ))
    } else {
        Err(format!(
            "pinned values exact but orderings fail: {}",
            failed.join("; ")
        ))
    }
}

// ---------------------------------------------------------------------------

fn analysis_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA7A);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(3..=200);
        let slope = rng.random_range(-2.0..2.0);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| slope * x + rng.random_range(-5.0..5.0))
            .collect();
        let got = pearson(&xs, &ys).map_err(|e| format!("dataset {case}: {e}"))?;
        let want = oracles::pearson_covariance(&xs, &ys);
        let err = (got - want).abs();
        check(err <= 1e-12, || {
            format!("dataset {case}: pearson {got} vs covariance formula {want}")
        })?;
        worst = worst.max(err);
    }
    for case in 0..1000 {
        let (a, b) = (
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
        );
        let k = rng.random_range(1..=20);
        let got = separation_emd(&vec![a; k], &vec![b; rng.random_range(1..=20)])
            .map_err(|e| e.to_string())?;
        check(got == (a - b).abs(), || {
            format!("point mass {case}: {got} vs |{a} - {b}|")
        })?;
    }
    for case in 0..1000 {
        let n = rng.random_range(1..=100);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let curve = ecdf(&xs).map_err(|e| e.to_string())?;
        let last = *curve.heights().last().ok_or("empty curve")?;
        check(last == 1.0, || {
            format!("ecdf {case}: final height {last:?}")
        })?;
    }
    Ok(format!(
        "pearson on 100 datasets (max err {worst:.1e}, tol 1e-12); 1000 point-mass pairs exactly |a-b|; 1000 ECDFs end at exactly 1"
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 7] = [
        ("EMD oracle equivalence", emd_oracle_equivalence),
        ("Metric identities", metric_identities),
        ("DDR invariants", ddr_invariants),
        ("Perturbation contracts", perturbation_contracts),
        ("Pipeline determinism", pipeline_determinism),
        (
            "Direction of effect on the fixture corpus",
            direction_of_effect,
        ),
        ("Analysis oracles", analysis_oracles),
    ];
    let mut failures = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failures} failed",
        criteria.len() - failures
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
