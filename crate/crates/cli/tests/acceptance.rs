//! Acceptance criteria, one pass/fail line each. Runs without the libtest
//! harness so the lines are always printed.

use std::cell::Cell;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use biasprop::association::{sc_eat, AttributeSetPair, PairKind};
use biasprop::corpus::{EmbeddingCorpus, ItemMeta, ItemSubset, Modality};
use biasprop::experiments::{plan, preset, run_experiment, Direction};
use biasprop::metrics::group_proportions;
use biasprop::retrieval::{batch_retrieve, cosine, top_k, Hit};
use biasprop::stats::spearman;
use biasprop::synth::{generate_world, PlantedParams};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

type Outcome = Result<String, String>;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn corpus(dim: usize, rows: &[Vec<f32>]) -> EmbeddingCorpus {
    let items = (0..rows.len())
        .map(|row| ItemMeta {
            id: format!("r{row}"),
            row,
            modality: Modality::Text,
            group: None,
            valence: None,
            template_id: None,
            source: "acceptance".into(),
        })
        .collect();
    EmbeddingCorpus::from_parts(dim, rows.concat(), items).unwrap()
}

fn pair(c: &EmbeddingCorpus, a: Vec<usize>, b: Vec<usize>) -> AttributeSetPair<'_> {
    AttributeSetPair::new(
        ItemSubset::new(c, a).unwrap(),
        ItemSubset::new(c, b).unwrap(),
        PairKind::ValencePoles,
        None,
    )
    .unwrap()
}

fn sc_eat_correctness() -> Outcome {
    let c = corpus(2, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let p = pair(&c, vec![0], vec![1]);
    let pos = sc_eat(&[1.0, 0.0], &p).map_err(|e| e.to_string())?.value;
    let neg = sc_eat(&[0.0, 1.0], &p).map_err(|e| e.to_string())?.value;
    ensure((pos - 2f64.sqrt()).abs() <= 1e-9, || {
        format!("w=(1,0) gave {pos}")
    })?;
    ensure((neg + 2f64.sqrt()).abs() <= 1e-9, || {
        format!("w=(0,1) gave {neg}")
    })?;
    ensure(format!("{pos:.8}") == "1.41421356", || format!("{pos:.8}"))?;

    let dup = corpus(
        2,
        &[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ],
    );
    let null = sc_eat(&[1.0, 0.0], &pair(&dup, vec![0, 1], vec![2, 3]))
        .map_err(|e| e.to_string())?
        .value;
    ensure(null.abs() <= 1e-9, || format!("equal poles gave {null}"))?;

    // dyadic coordinates and scalars keep every scaled vector exact in f32
    let coordinate = (-(1i32 << 15)..(1i32 << 15)).prop_map(|k| k as f32 / (1 << 15) as f32);
    let scalar = (1i32..256, -8i32..8).prop_map(|(m, e)| m as f32 * 2f32.powi(e));
    let instance = (2usize..6, 1usize..8).prop_flat_map(move |(dim, n)| {
        (
            proptest::collection::vec(coordinate.clone(), dim),
            proptest::collection::vec(proptest::collection::vec(coordinate.clone(), dim), 2 * n),
            Just(n),
        )
    });
    let checked = Cell::new(0usize);
    let degenerate = Cell::new(0usize);
    runner(1000)
        .run(
            &(instance, scalar, any::<prop::sample::Index>()),
            |((w, rows, n), s, which)| {
                let nonzero = |v: &[f32]| v.iter().any(|&x| x != 0.0);
                if !nonzero(&w) || !rows.iter().all(|r| nonzero(r)) {
                    degenerate.set(degenerate.get() + 1);
                    return Ok(());
                }
                let dim = w.len();
                let c = corpus(dim, &rows);
                let p = pair(&c, (0..n).collect(), (n..2 * n).collect());
                let Ok(es) = sc_eat(&w, &p) else {
                    degenerate.set(degenerate.get() + 1);
                    return Ok(());
                };
                let rev = sc_eat(&w, &p.swapped()).unwrap().value;
                prop_assert_eq!(es.value, -rev);
                prop_assert!(es.value.abs() <= 2.0);
                let scaled: Vec<f32> = w.iter().map(|x| x * s).collect();
                prop_assert!((sc_eat(&scaled, &p).unwrap().value - es.value).abs() <= 1e-12);
                let mut rows2 = rows.clone();
                for x in &mut rows2[which.index(rows.len())] {
                    *x *= s;
                }
                let c2 = corpus(dim, &rows2);
                let p2 = pair(&c2, (0..n).collect(), (n..2 * n).collect());
                prop_assert!((sc_eat(&w, &p2).unwrap().value - es.value).abs() <= 1e-12);
                checked.set(checked.get() + 1);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())?;
    let (checked, degenerate) = (checked.get(), degenerate.get());
    ensure(checked + degenerate == 1000 && checked > 900, || {
        format!("only {checked} non-degenerate instances")
    })?;
    Ok(format!("hand cases exact, {checked} property instances"))
}

fn naive_top_k(query: &[f32], c: &EmbeddingCorpus, candidates: &[usize], k: usize) -> Vec<Hit> {
    let mut hits: Vec<Hit> = candidates
        .iter()
        .map(|&row| Hit {
            row,
            score: cosine(query, c.row(row)).unwrap(),
        })
        .collect();
    hits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.row.cmp(&b.row))
    });
    hits.truncate(k);
    hits
}

fn retrieval_exactness() -> Outcome {
    let instance = (2usize..=2000, 1usize..=64).prop_flat_map(|(n, dim)| {
        (
            proptest::collection::vec(proptest::collection::vec(-1.0f32..1.0, dim), n),
            proptest::collection::vec(
                proptest::option::weighted(0.2, any::<prop::sample::Index>()),
                n,
            ),
            any::<prop::sample::Index>(),
            any::<prop::sample::Index>(),
        )
    });
    let ties = Cell::new(0usize);
    runner(200)
        .run(&instance, |(mut rows, dups, q, k)| {
            for i in 1..rows.len() {
                rows[i][0] += 2.0;
                if let Some(j) = dups[i] {
                    rows[i] = rows[j.index(i)].clone();
                    ties.set(ties.get() + 1);
                }
            }
            rows[0][0] += 2.0;
            let dim = rows[0].len();
            let c = corpus(dim, &rows);
            let candidates: Vec<usize> = (0..rows.len()).collect();
            let k = 1 + k.index(rows.len());
            let query = c.row(q.index(rows.len()));
            let got = top_k(query, &c.all(), k).unwrap();
            prop_assert_eq!(got.ranked, naive_top_k(query, &c, &candidates, k));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let ties = ties.get();

    let mut rows = proptest::collection::vec(proptest::collection::vec(-1.0f32..1.0, 64), 2000)
        .new_tree(&mut runner(1))
        .map_err(|e| e.to_string())?
        .current();
    for i in (0..2000).step_by(5) {
        rows[i + 1] = rows[i].clone();
    }
    let c = corpus(64, &rows);
    let queries = ItemSubset::new(&c, (0..2000).step_by(4).collect()).unwrap();
    let candidates = ItemSubset::new(&c, (0..2000).filter(|r| r % 4 != 0).collect()).unwrap();
    let json = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            serde_json::to_vec(&batch_retrieve(&queries, &candidates, 100).unwrap()).unwrap()
        })
    };
    let serial = json(1);
    ensure(serial == json(8) && serial == json(3), || {
        "parallel output differs from serial".into()
    })?;
    Ok(format!(
        "200 instances ({ties} injected duplicate rows), serial == parallel"
    ))
}

fn spearman_correctness() -> Outcome {
    let rho = |x: &[f64], y: &[f64]| spearman(x, y).map(|c| c.rho).map_err(|e| e.to_string());
    let cases = [
        (vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0], 1.0),
        (vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0], -1.0),
        (
            vec![1.0, 2.0, 2.0, 4.0],
            vec![1.0, 3.0, 2.0, 4.0],
            0.94868330,
        ),
    ];
    for (x, y, want) in &cases {
        let got = rho(x, y)?;
        ensure((got - want).abs() <= 1e-8, || {
            format!("{x:?} {y:?} gave {got}")
        })?;
    }
    let grid = proptest::collection::vec(-50i32..50, 3..60);
    let instance = grid.prop_flat_map(|x| {
        let n = x.len();
        (Just(x), proptest::collection::vec(-50i32..50, n), 0usize..3)
    });
    let checked = Cell::new(0usize);
    runner(500)
        .run(&instance, |(x, y, which)| {
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            let y: Vec<f64> = y.into_iter().map(f64::from).collect();
            let Ok(base) = spearman(&x, &y) else {
                return Ok(());
            };
            let f = |v: f64| match which {
                0 => (v / 10.0).exp(),
                1 => v * v * v,
                _ => 3.0 * v - 7.0,
            };
            let fx: Vec<f64> = x.iter().map(|&v| f(v)).collect();
            let gy: Vec<f64> = y.iter().map(|&v| (v / 7.0).exp() + v).collect();
            prop_assert_eq!(spearman(&fx, &gy).unwrap().rho, base.rho);
            checked.set(checked.get() + 1);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let checked = checked.get();
    ensure(checked > 450, || {
        format!("only {checked} non-constant instances")
    })?;
    Ok(format!("3 examples, {checked} invariance instances"))
}

fn biasprop(args: &[&str]) -> Result<(String, bool), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_biasprop"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.stderr.is_empty() && !out.status.success() {
        eprint!("{}", String::from_utf8_lossy(&out.stderr));
    }
    Ok((
        String::from_utf8_lossy(&out.stdout).into_owned(),
        out.status.success(),
    ))
}

fn oracle_fidelity() -> Outcome {
    let (stdout, ok) = biasprop(&["oracle-check", "--synth-default", "--preset", "all-small"])?;
    let last = stdout.lines().last().unwrap_or_default().to_string();
    let worst: f64 = last
        .strip_prefix("max |Δrho| = ")
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("unexpected output: {last}"))?;
    let experiments = stdout
        .lines()
        .filter(|l| l.contains(" on synthetic: "))
        .count();
    ensure(ok && worst <= 1e-9 && experiments == 8, || last.clone())?;
    Ok(last)
}

fn planted_recovery() -> Outcome {
    let fixtures = [
        ("1*-a/small", Direction::ImageToText),
        ("1*-b/small", Direction::TextToImage),
    ];
    let noises = [0.0, 0.05, 0.1, 0.2, 0.4];
    let mut detail = Vec::new();
    for (name, direction) in fixtures {
        let spec = preset(name).unwrap();
        let rho_at = |noise: f64, seed: u64| -> Result<f64, String> {
            let model = generate_world(&PlantedParams::valence_baseline(direction, noise, seed))
                .map_err(|e| e.to_string())?
                .model("baseline");
            let mut spec = spec.clone();
            spec.seed = seed;
            let report = run_experiment(&spec, &model).map_err(|e| e.to_string())?;
            report.strata[0]
                .rho()
                .ok_or_else(|| "undefined rho".to_string())
        };
        let zero = rho_at(0.0, 0)?;
        ensure(zero == 1.0, || format!("{name}: zero-noise rho {zero}"))?;
        let mut means = Vec::new();
        for &noise in &noises {
            let rhos = (0..20)
                .map(|seed| rho_at(noise, seed))
                .collect::<Result<Vec<_>, _>>()?;
            means.push(rhos.iter().sum::<f64>() / rhos.len() as f64);
        }
        let trend = spearman(&means, &noises).map_err(|e| e.to_string())?.rho;
        ensure(
            means.windows(2).all(|w| w[0] > w[1]) && trend == -1.0,
            || format!("{name}: means {means:?}"),
        )?;
        detail.push(format!(
            "{name} means {}",
            means
                .iter()
                .map(|m| format!("{m:.3}"))
                .collect::<Vec<_>>()
                .join(" > ")
        ));
    }
    Ok(detail.join("; "))
}

fn partition_identity() -> Outcome {
    let model = generate_world(&PlantedParams::default())
        .map_err(|e| e.to_string())?
        .model("synthetic");
    let c = &model.corpus;
    let mut retrievals = 0usize;
    let mut worst = 0.0f64;
    for name in ["2*-a/small", "2*-b/small", "2-a/small", "2-b/small"] {
        let p = plan(&preset(name).unwrap(), c).map_err(|e| e.to_string())?;
        let rows: Vec<usize> = p
            .targets
            .iter()
            .flat_map(|t| t.rows.iter().copied())
            .collect();
        let targets = ItemSubset::new(c, rows).map_err(|e| e.to_string())?;
        for pool in &p.pools {
            for r in batch_retrieve(&targets, pool, p.spec.k).map_err(|e| e.to_string())? {
                let total: f64 = group_proportions(&r, c)
                    .map_err(|e| e.to_string())?
                    .iter()
                    .sum();
                worst = worst.max((total - 1.0).abs());
                retrievals += 1;
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max |Σ − 1| = {worst:e}"))?;
    Ok(format!("{retrievals} retrievals, max |Σ − 1| = {worst:e}"))
}

fn suite_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let world = dir.path().join("world");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (_, ok) = biasprop(&["synth", "-o", &s(&world), "--seed", "11"])?;
    ensure(ok, || "synth failed".into())?;
    let config = s(&world.join("config.json"));
    let mut reports = Vec::new();
    for (run, jobs) in ["1", "8", "8", "3"].into_iter().enumerate() {
        let out = dir.path().join(format!("run-{run}"));
        let (_, ok) = biasprop(&["--jobs", jobs, "suite", &config, "-o", &s(&out)])?;
        ensure(ok, || format!("suite with --jobs {jobs} failed"))?;
        reports.push(fs::read(out.join("report.json")).map_err(|e| e.to_string())?);
    }
    ensure(reports.windows(2).all(|w| w[0] == w[1]), || {
        "reports differ".into()
    })?;
    Ok(format!(
        "4 runs (jobs 1, 8, 8, 3), {} bytes each",
        reports[0].len()
    ))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);
    let criteria: [Criterion; 7] = [
        (
            "sc_eat correctness",
            sc_eat_correctness,
            Some(Duration::from_secs(5)),
        ),
        (
            "retrieval exactness",
            retrieval_exactness,
            Some(Duration::from_secs(30)),
        ),
        ("spearman correctness", spearman_correctness, None),
        (
            "engine/oracle fidelity",
            oracle_fidelity,
            Some(Duration::from_secs(60)),
        ),
        ("planted-signal recovery", planted_recovery, None),
        ("partition identity", partition_identity, None),
        ("suite determinism", suite_determinism, None),
    ];
    let mut failed = 0;
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!(
                "took {:.2} s, limit {} s",
                elapsed.as_secs_f64(),
                limit.as_secs()
            )),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!(
                "PASS  {name:<24} {:>7.2} s  {detail}",
                elapsed.as_secs_f64()
            ),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<24} {:>7.2} s  {why}", elapsed.as_secs_f64());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
