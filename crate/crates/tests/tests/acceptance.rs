//! Acceptance suite: one PASS / FAIL / SKIP line per criterion.
//!
//! Runs as a plain binary (`harness = false`); exits non-zero if any
//! criterion fails. Set `FLOWLINK_LUXEMBOURG_DIR` to a directory holding
//! `nodes.csv` and `edges.csv` to enable the optional road-network run.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use flowlink::analysis::{integer_shifts, translation_invariance};
use flowlink::autodiff::grad_check;
use flowlink::dataset::{generate_synthetic_network, prepare_dataset, save_dataset, DatasetSplit, NetworkKind, Split};
use flowlink::graph::SpatialGraph;
use flowlink::linegraph::{build_line_graph, VectorLineGraph};
use flowlink::metrics::{auc, hits_at_k};
use flowlink::model::{GavConfig, GavModel, LayerKind, LineGraphInputs};
use flowlink::pipeline::{run_training, RunConfig};
use flowlink::subgraph::{extract_enclosing_subgraph, EnclosingSubgraph};
use flowlink::train::{evaluate, train, SampleSet, TrainConfig, TrainState};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_GRAPHS: usize = 20;
const GRAD_MAX_REL_ERROR: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(60);

const STRUCTURE_PASSES: usize = 10_000;

const TRANSLATION_TARGETS: usize = 100;
const TRANSLATION_SHIFTS: usize = 10;

const METRIC_INSTANCES: usize = 200;
const METRIC_MAX_SCORES: usize = 1000;
const METRIC_TOL: f64 = 1e-12;

const ORIENTATION_SUBGRAPHS: usize = 50;

const E2E_NODES: usize = 5000;
const E2E_SEED: u64 = 42;
const E2E_MIN_TEST_AUC: f64 = 0.95;
const UNTRAINED_AUC_CENTER: f64 = 0.5;
const UNTRAINED_AUC_BAND: f64 = 0.05;
const E2E_BUDGET: Duration = Duration::from_secs(30 * 60);

const ROAD_MIN_TEST_AUC: f64 = 0.95;
const ROAD_ENV: &str = "FLOWLINK_LUXEMBOURG_DIR";

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    name: &'static str,
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(name: &'static str, pass: bool, detail: String) -> Self {
        let status = if pass { Status::Pass } else { Status::Fail };
        Self { name, status, detail }
    }
}

fn e2e_train_config() -> TrainConfig {
    TrainConfig {
        max_epochs: 80,
        eval_every: 500,
        patience: 5,
        seed: E2E_SEED,
        ..TrainConfig::default()
    }
}

/// Connected random subgraph with `vnodes` edges including the candidate.
fn random_line_graph(rng: &mut ChaCha8Rng, dim: usize, vnodes: usize) -> VectorLineGraph {
    let n = (vnodes / 2 + 2).max(3);
    let coords: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut edges = BTreeSet::new();
    for i in 2..n {
        edges.insert((rng.random_range(0..i), i));
    }
    while edges.len() + 1 < vnodes {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b && (a.min(b), a.max(b)) != (0, 1) {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let edges: Vec<_> = edges.into_iter().collect();
    let sub = EnclosingSubgraph::from_parts(dim, coords, (0..n).collect(), &edges, n).unwrap();
    build_line_graph(&sub)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut sizes = Vec::new();
    for i in 0..GRAD_GRAPHS {
        let dim = 2 + i % 2;
        let vnodes = rng.random_range(3..=15);
        let vlg = random_line_graph(&mut rng, dim, vnodes);
        sizes.push(vlg.len());
        let model = GavModel::new(GavConfig::new(dim), i as u64).unwrap();
        let inputs = LineGraphInputs::new(&vlg).unwrap();
        let y = f64::from(rng.random_range(0..2u8));
        let report = grad_check(&model.store, |t| Ok(model.loss(t, &inputs, y)?.1)).unwrap();
        worst = worst.max(report.max_rel_error);
    }
    let elapsed = start.elapsed();
    let sizes_ok = sizes.iter().all(|n| (3..=15).contains(n));
    Outcome::check(
        "gradient correctness",
        worst < GRAD_MAX_REL_ERROR && elapsed < GRAD_BUDGET && sizes_ok,
        format!(
            "{GRAD_GRAPHS} line graphs ({}..={} vnodes), max relative error {worst:.2e} (< {GRAD_MAX_REL_ERROR:e}), {:.1}s (< {}s)",
            sizes.iter().min().unwrap(),
            sizes.iter().max().unwrap(),
            elapsed.as_secs_f64(),
            GRAD_BUDGET.as_secs()
        ),
    )
}

fn scale_factor_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0usize;
    let mut vnodes = 0usize;
    let mut max_abs_s = 0.0f64;
    let per_model = 100;
    for m in 0..STRUCTURE_PASSES / per_model {
        let dim = 2 + m % 2;
        let model = GavModel::new(GavConfig::new(dim), 1000 + m as u64).unwrap();
        for _ in 0..per_model {
            let size = rng.random_range(1..=30);
            let vlg = random_line_graph(&mut rng, dim, size);
            let inputs = LineGraphInputs::new(&vlg).unwrap();
            let eval = model.evaluate(&inputs).unwrap();
            for (i, node) in vlg.vnodes.iter().enumerate() {
                let s = eval.s[i];
                max_abs_s = max_abs_s.max(s.abs());
                let exact = node.embedding.iter().enumerate().all(|(c, e)| eval.refined[[i, c]] == s * e);
                if !exact || !(s > -1.0 && s < 1.0) {
                    violations += 1;
                }
            }
            vnodes += vlg.len();
        }
    }
    Outcome::check(
        "scale-factor structure",
        violations == 0,
        format!(
            "{STRUCTURE_PASSES} forward passes, {vnodes} vnodes, {violations} violations of refined = s * embedding with |s| < 1 (max |s| {max_abs_s:.4})"
        ),
    )
}

/// Copy of `g` with coordinates scaled by 10 and rounded to integers.
fn integer_copy(g: &SpatialGraph) -> SpatialGraph {
    let rows: Vec<Vec<f64>> = (0..g.num_nodes())
        .map(|i| g.coord(i).iter().map(|x| (10.0 * x).round()).collect())
        .collect();
    SpatialGraph::from_rows(&rows, g.edges()).unwrap()
}

fn translation_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max_diff = 0.0f64;
    let mut targets = 0;
    let mut non_integer = 0;
    for (kind, seed) in [(NetworkKind::VesselTree, 3), (NetworkKind::RoadGrid, 4)] {
        let g = integer_copy(&generate_synthetic_network(kind, 1500, seed).unwrap());
        non_integer += (0..g.num_nodes()).filter(|&i| g.coord(i).iter().any(|x| x.fract() != 0.0)).count();
        let model = GavModel::new(GavConfig::new(g.dim()), seed).unwrap();
        let shifts = integer_shifts(g.dim(), TRANSLATION_SHIFTS, seed);
        // Half real edges, half random pairs.
        let mut pairs: Vec<(usize, usize)> = g.edges().choose_multiple(&mut rng, TRANSLATION_TARGETS / 4).copied().collect();
        while pairs.len() < TRANSLATION_TARGETS / 2 {
            let (u, v) = (rng.random_range(0..g.num_nodes()), rng.random_range(0..g.num_nodes()));
            if u != v {
                pairs.push((u, v));
            }
        }
        for (u, v) in pairs {
            let report = translation_invariance(&model, &g, u, v, &shifts).unwrap();
            max_diff = max_diff.max(report.max_abs_diff);
            targets += 1;
        }
    }
    Outcome::check(
        "translation invariance",
        max_diff == 0.0 && non_integer == 0 && targets == TRANSLATION_TARGETS,
        format!("{targets} targets x {TRANSLATION_SHIFTS} integer shifts, max |logit change| = {max_diff:e}"),
    )
}

fn auc_oracle(pos: &[f64], neg: &[f64]) -> f64 {
    let mut credit = 0.0;
    for &p in pos {
        for &n in neg {
            credit += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    credit / (pos.len() * neg.len()) as f64
}

/// A positive is a hit when fewer than `k` negatives score at or above it.
fn hits_oracle(pos: &[f64], neg: &[f64], k: usize) -> f64 {
    let hits = pos.iter().filter(|&&p| neg.iter().filter(|&&n| n >= p).count() < k).count();
    100.0 * hits as f64 / pos.len() as f64
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut comparisons = 0;
    for inst in 0..METRIC_INSTANCES {
        let total = rng.random_range(2..=METRIC_MAX_SCORES);
        let np = rng.random_range(1..total);
        // Every other instance draws from a few levels to force ties.
        let levels = if inst % 2 == 0 { 0 } else { rng.random_range(2..=6) };
        let draw = |rng: &mut ChaCha8Rng| {
            if levels == 0 {
                rng.random_range(-5.0..5.0)
            } else {
                f64::from(rng.random_range(0..levels))
            }
        };
        let pos: Vec<f64> = (0..np).map(|_| draw(&mut rng)).collect();
        let neg: Vec<f64> = (np..total).map(|_| draw(&mut rng)).collect();
        worst = worst.max((auc(&pos, &neg).unwrap() - auc_oracle(&pos, &neg)).abs());
        comparisons += 1;
        for k in [1, 20, 50, 100, neg.len()] {
            if k <= neg.len() {
                worst = worst.max((hits_at_k(&pos, &neg, k).unwrap() - hits_oracle(&pos, &neg, k)).abs());
                comparisons += 1;
            }
        }
    }
    Outcome::check(
        "metric oracles",
        worst <= METRIC_TOL,
        format!("{METRIC_INSTANCES} instances, {comparisons} comparisons, max deviation {worst:e} (<= {METRIC_TOL:e})"),
    )
}

/// Expected orientation of every non-candidate edge by a BFS over the full graph.
fn orientation_oracle(g: &SpatialGraph, u: usize, v: usize, h: usize) -> BTreeMap<(usize, usize), (usize, usize)> {
    let mut hop = vec![usize::MAX; g.num_nodes()];
    hop[u] = 0;
    hop[v] = 0;
    let mut queue = VecDeque::from([u, v]);
    while let Some(x) = queue.pop_front() {
        for &y in g.neighbors(x) {
            let candidate = (x == u && y == v) || (x == v && y == u);
            if !candidate && hop[y] == usize::MAX {
                hop[y] = hop[x] + 1;
                queue.push_back(y);
            }
        }
    }
    let mut out = BTreeMap::new();
    for &(a, b) in g.edges() {
        if hop[a] > h || hop[b] > h || (a.min(b), a.max(b)) == (u.min(v), u.max(v)) {
            continue;
        }
        let oriented = if (hop[a], a) <= (hop[b], b) { (a, b) } else { (b, a) };
        out.insert((a.min(b), a.max(b)), oriented);
    }
    out
}

fn line_graph_oracles() -> Outcome {
    let mut failures = Vec::new();

    let k3 = SpatialGraph::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]], &[(0, 1), (1, 2), (0, 2)]).unwrap();
    let l = build_line_graph(&extract_enclosing_subgraph(&k3, 0, 1, 1).unwrap());
    if l.len() != 3 || l.num_vedges() != 3 || l.vadj.iter().any(|r| r.len() != 2) {
        failures.push("L(K3) is not K3".to_string());
    }

    // A path on m vertices maps to a path on m - 1 vertices.
    for m in 2..=10 {
        let rows: Vec<Vec<f64>> = (0..m).map(|i| vec![i as f64, 0.0]).collect();
        let edges: Vec<(usize, usize)> = (0..m - 1).map(|i| (i, i + 1)).collect();
        let path = SpatialGraph::from_rows(&rows, &edges).unwrap();
        let start = m / 2 - 1;
        let l = build_line_graph(&extract_enclosing_subgraph(&path, start, start + 1, m).unwrap());
        let leaves = l.vadj.iter().filter(|r| r.len() == 1).count();
        let max_degree = l.vadj.iter().map(Vec::len).max().unwrap_or(0);
        let shape_ok = if m == 2 { l.vadj[0].is_empty() } else { leaves == 2 && max_degree <= 2 };
        if l.len() != m - 1 || l.num_vedges() != m - 2 || !shape_ok {
            failures.push(format!("path on {m} vertices: {} vnodes, {} vedges", l.len(), l.num_vedges()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 300;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..20.0), rng.random_range(0.0..20.0)]).collect();
    let edges: Vec<(usize, usize)> = (0..600)
        .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
        .filter(|(a, b)| a != b)
        .collect();
    let g = SpatialGraph::from_rows(&rows, &edges).unwrap();
    let mut checked_edges = 0;
    for _ in 0..ORIENTATION_SUBGRAPHS {
        let u = rng.random_range(0..n);
        let v = (u + rng.random_range(1..n)) % n;
        let h = rng.random_range(1..=2);
        let l = build_line_graph(&extract_enclosing_subgraph(&g, u, v, h).unwrap());
        let expected = orientation_oracle(&g, u, v, h);
        if l.global_orientation(l.target_vnode) != (u, v) {
            failures.push(format!("target ({u}, {v}) misoriented"));
        }
        let mut got = BTreeMap::new();
        for k in (0..l.len()).filter(|&k| k != l.target_vnode) {
            let (t, hd) = l.global_orientation(k);
            let diff: Vec<f64> = g.coord(hd).iter().zip(g.coord(t)).map(|(a, b)| a - b).collect();
            if diff != l.vnodes[k].embedding {
                failures.push(format!("embedding of ({t}, {hd}) is not head - tail"));
            }
            got.insert((t.min(hd), t.max(hd)), (t, hd));
        }
        checked_edges += got.len();
        if got != expected {
            failures.push(format!("orientation mismatch for target ({u}, {v}), h = {h}"));
        }
    }
    Outcome::check(
        "line-graph oracles",
        failures.is_empty(),
        if failures.is_empty() {
            format!("K3, paths on 2..=10 vertices, {ORIENTATION_SUBGRAPHS} subgraphs ({checked_edges} edges) match the BFS oracle")
        } else {
            failures.join("; ")
        },
    )
}

struct TrainedLayer {
    layer: LayerKind,
    test_auc: f64,
    finite: bool,
    steps: u64,
    seconds: f64,
}

fn train_layer(layer: LayerKind, sets: &[SampleSet; 3]) -> TrainedLayer {
    let start = Instant::now();
    let mut config = GavConfig::new(3);
    config.layer = layer;
    let tc = e2e_train_config();
    let state = train(&sets[0], &sets[1], &tc, TrainState::new(config, &tc).unwrap(), |_| Ok(())).unwrap();
    let metrics = evaluate(state.best_model(), &sets[2], E2E_SEED).unwrap();
    let finite = state.losses.iter().all(|l| l.is_finite())
        && state.history.iter().all(|h| h.val_auc.is_finite())
        && metrics.auc.is_finite();
    TrainedLayer {
        layer,
        test_auc: metrics.auc,
        finite,
        steps: state.step,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn end_to_end() -> (Outcome, [SampleSet; 3], TrainedLayer) {
    let start = Instant::now();
    let g = generate_synthetic_network(NetworkKind::VesselTree, E2E_NODES, E2E_SEED).unwrap();
    let data = prepare_dataset(&g, E2E_SEED, None).unwrap();
    let sets = Split::ALL.map(|s| SampleSet::from_split(&data, s, 1).unwrap());
    let untrained = GavModel::new(GavConfig::new(3), E2E_SEED).unwrap();
    let untrained_auc = evaluate(&untrained, &sets[2], E2E_SEED).unwrap().auc;
    let gav = train_layer(LayerKind::Gav, &sets);
    let elapsed = start.elapsed();
    let outcome = Outcome::check(
        "end-to-end learning",
        gav.test_auc >= E2E_MIN_TEST_AUC
            && (untrained_auc - UNTRAINED_AUC_CENTER).abs() <= UNTRAINED_AUC_BAND
            && elapsed < E2E_BUDGET,
        format!(
            "{E2E_NODES}-node vessel tree, {} train samples: trained test AUC {:.4} (>= {E2E_MIN_TEST_AUC}) after {} steps, untrained {:.4} ({UNTRAINED_AUC_CENTER} +/- {UNTRAINED_AUC_BAND}), {:.0}s (< {}s)",
            sets[0].len(),
            gav.test_auc,
            gav.steps,
            untrained_auc,
            elapsed.as_secs_f64(),
            E2E_BUDGET.as_secs()
        ),
    );
    (outcome, sets, gav)
}

fn ablation_ordering(sets: &[SampleSet; 3], gav: &TrainedLayer) -> Outcome {
    let others: Vec<TrainedLayer> = [LayerKind::EdgeConv, LayerKind::Gat, LayerKind::Sage, LayerKind::Gcn]
        .into_iter()
        .map(|k| train_layer(k, sets))
        .collect();
    let gcn = others.iter().find(|t| t.layer == LayerKind::Gcn).unwrap();
    let all_finite = gav.finite && others.iter().all(|t| t.finite);
    let summary: Vec<String> = std::iter::once(gav)
        .chain(&others)
        .map(|t| format!("{} {:.4} ({} steps, {:.0}s{})", t.layer, t.test_auc, t.steps, t.seconds, if t.finite { "" } else { ", NaN" }))
        .collect();
    Outcome::check(
        "ablation ordering",
        gav.test_auc >= gcn.test_auc && all_finite,
        format!("test AUC {}; requires gav >= gcn and no NaN", summary.join(", ")),
    )
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn prepared(seed: u64) -> DatasetSplit {
    let g = generate_synthetic_network(NetworkKind::VesselTree, 400, seed).unwrap();
    prepare_dataset(&g, seed, None).unwrap()
}

fn determinism() -> Outcome {
    let run = RunConfig {
        model: GavConfig::new(3),
        train: TrainConfig {
            max_steps: Some(40),
            eval_every: 15,
            batch_size: 16,
            seed: 9,
            ..TrainConfig::default()
        },
    };
    let once = |threads: usize| {
        let dir = tempfile::tempdir().unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let data = prepared(9);
            save_dataset(&data, &dir.path().join("data")).unwrap();
            run_training(&data, &run, &dir.path().join("run"), false).unwrap();
        });
        files_under(dir.path())
    };
    let a = once(1);
    let b = once(4);
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let has = |name: &str| a.contains_key(Path::new(name));
    let complete = ["run/metrics.json", "run/last/params.bin", "run/best/params.bin", "data/splits.csv"]
        .iter()
        .all(|f| has(f));
    Outcome::check(
        "determinism",
        differing.is_empty() && complete,
        if differing.is_empty() {
            format!("{} artifact files byte-identical across two runs (1 and 4 threads)", a.len())
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    )
}

fn road_reproduction() -> Outcome {
    let name = "road-network reproduction";
    let Some(dir) = std::env::var_os(ROAD_ENV).map(PathBuf::from) else {
        return Outcome {
            name,
            status: Status::Skip,
            detail: format!("{ROAD_ENV} not set"),
        };
    };
    let (nodes, edges) = (dir.join("nodes.csv"), dir.join("edges.csv"));
    if !nodes.exists() || !edges.exists() {
        return Outcome {
            name,
            status: Status::Skip,
            detail: format!("no nodes.csv / edges.csv in {}", dir.display()),
        };
    }
    let start = Instant::now();
    let g = flowlink::dataset::load_graph_csv(&nodes, &edges).unwrap();
    let data = prepare_dataset(&g, E2E_SEED, None).unwrap();
    let sets = Split::ALL.map(|s| SampleSet::from_split(&data, s, 1).unwrap());
    let tc = TrainConfig { seed: E2E_SEED, ..TrainConfig::default() };
    let state = train(&sets[0], &sets[1], &tc, TrainState::new(GavConfig::new(g.dim()), &tc).unwrap(), |_| Ok(())).unwrap();
    let test_auc = evaluate(state.best_model(), &sets[2], E2E_SEED).unwrap().auc;
    Outcome::check(
        name,
        test_auc >= ROAD_MIN_TEST_AUC,
        format!(
            "{} nodes, {} edges: test AUC {test_auc:.4} (>= {ROAD_MIN_TEST_AUC}), {:.0}s",
            g.num_nodes(),
            g.num_edges(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn report(o: &Outcome) {
    let tag = match o.status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Skip => "SKIP",
    };
    println!("{tag} {}: {}", o.name, o.detail);
}

fn main() {
    // `cargo test -- --list` and similar harness flags have nothing to list here.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    // Positional arguments select criteria by substring, like libtest filters.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut outcomes = Vec::new();
    let mut run = |o: Outcome| {
        report(&o);
        outcomes.push(o);
    };
    let simple: [(&str, fn() -> Outcome); 5] = [
        ("gradient correctness", gradient_correctness),
        ("scale-factor structure", scale_factor_structure),
        ("translation invariance", translation_exactness),
        ("metric oracles", metric_oracles),
        ("line-graph oracles", line_graph_oracles),
    ];
    for (name, criterion) in simple {
        if wanted(name) {
            run(criterion());
        }
    }
    if wanted("end-to-end learning") || wanted("ablation ordering") {
        let (e2e, sets, gav) = end_to_end();
        run(e2e);
        if wanted("ablation ordering") {
            run(ablation_ordering(&sets, &gav));
        }
    }
    if wanted("determinism") {
        run(determinism());
    }
    if wanted("road-network reproduction") {
        run(road_reproduction());
    }
    let failed = outcomes.iter().filter(|o| matches!(o.status, Status::Fail)).count();
    println!(
        "acceptance: {} passed, {failed} failed, {} skipped",
        outcomes.iter().filter(|o| matches!(o.status, Status::Pass)).count(),
        outcomes.iter().filter(|o| matches!(o.status, Status::Skip)).count()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
