//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Runs without the libtest harness so criteria can share the
//! synthetic datasets they render.

use std::collections::{BTreeSet, HashMap};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::{Point3, Vector3};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use sdfmap::esdf::{build_esdf, esdf_distance, update_esdf, EsdfConfig};
use sdfmap::integrate::{occupancy_update, quantize_log_odds, tsdf_update, OccupancyParams};
use sdfmap::map::{split_global, voxel_center_position, GlobalIndex, GridIndex, Layer, VoxelIndex, BLOCK_SIZE};
use sdfmap::mesh::{mesh_all, MeshConfig};
use sdfmap::oracle::{brute_force_esdf, esdf_sites_and_domain};
use sdfmap::query::{query_batch, sample_points, Interpolation, QueryOptions, SampleMode};
use sdfmap::scene::{Scene, Shape};
use sdfmap::voxels::{EsdfVoxel, OccupancyVoxel, TsdfVoxel};
use serde_json::Value;

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn FnOnce() -> Outcome + 'a>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($fmt)+));
        }
    };
}

fn sdfmap(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sdfmap"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("sdfmap {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

// ---- occupancy worlds for the ESDF criteria

const FREE: f32 = -2.0;
const OCCUPIED: f32 = 3.0;

fn free_world(blocks: [i32; 3], vs: f64) -> Layer<OccupancyVoxel> {
    let mut occ: Layer<OccupancyVoxel> = Layer::new(vs).unwrap();
    for x in 0..blocks[0] {
        for y in 0..blocks[1] {
            for z in 0..blocks[2] {
                for v in occ.get_or_allocate_block(GridIndex::new(x, y, z)).unwrap().voxels_mut() {
                    v.log_odds = FREE;
                }
            }
        }
    }
    occ
}

fn paint_box(occ: &mut Layer<OccupancyVoxel>, lo: [i32; 3], hi: [i32; 3], value: f32) -> BTreeSet<GridIndex> {
    let mut touched = BTreeSet::new();
    for x in lo[0]..hi[0] {
        for y in lo[1]..hi[1] {
            for z in lo[2]..hi[2] {
                let p = GlobalIndex::new(x, y, z);
                if let Some(v) = occ.get_voxel_mut(&p) {
                    v.log_odds = value;
                    touched.insert(split_global(&p).0);
                }
            }
        }
    }
    touched
}

fn random_box(rng: &mut StdRng, n: [i32; 3]) -> ([i32; 3], [i32; 3]) {
    let lo: [i32; 3] = std::array::from_fn(|i| rng.random_range(0..n[i] - 1));
    let hi: [i32; 3] = std::array::from_fn(|i| (lo[i] + rng.random_range(1..8)).min(n[i]));
    (lo, hi)
}

fn identical(a: &Layer<EsdfVoxel>, b: &Layer<EsdfVoxel>) -> bool {
    a.sorted_indices() == b.sorted_indices()
        && b.iter_sorted().all(|(g, block)| a.get_block(&g).unwrap().voxels() == block.voxels())
}

fn incremental_equals_batch() -> Outcome {
    let start = Instant::now();
    let vs = 0.05;
    let cfg = EsdfConfig::new(vs);
    let n = 8 * BLOCK_SIZE as i32;
    let mut edits = 0;
    for seed in 0..50 {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut occ = free_world([8; 3], vs);
        let all: BTreeSet<_> = occ.sorted_indices().into_iter().collect();
        let mut esdf = build_esdf(&occ, &all, &cfg).unwrap();
        let mut placed = Vec::new();
        for step in 0..20 {
            let touched = if !placed.is_empty() && rng.random_bool(0.4) {
                let (lo, hi) = placed.swap_remove(rng.random_range(0..placed.len()));
                paint_box(&mut occ, lo, hi, FREE)
            } else {
                let (lo, hi) = random_box(&mut rng, [n; 3]);
                placed.push((lo, hi));
                paint_box(&mut occ, lo, hi, OCCUPIED)
            };
            update_esdf(&mut esdf, &occ, &touched, &cfg).unwrap();
            let batch = build_esdf(&occ, &all, &cfg).unwrap();
            ensure!(identical(&esdf, &batch), "sequence {seed} differs after edit {step}");
            edits += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "took {secs:.1} s");
    Ok(format!("50 sequences, {edits} edits bit-identical, {secs:.1} s"))
}

fn oracle_accuracy() -> Outcome {
    let start = Instant::now();
    let vs = 0.05;
    let mut cfg = EsdfConfig::new(vs);
    cfg.max_distance = 10.0;
    let (mut voxels, mut exact, mut worst) = (0usize, 0usize, 0.0f64);
    for seed in 0..20 {
        let mut rng = StdRng::seed_from_u64(1000 + seed);
        let blocks: [i32; 3] = std::array::from_fn(|_| rng.random_range(2..=8));
        let n = blocks.map(|b| b * BLOCK_SIZE as i32);
        let mut occ = free_world(blocks, vs);
        for _ in 0..rng.random_range(1..6) {
            let (lo, hi) = random_box(&mut rng, n);
            paint_box(&mut occ, lo, hi, OCCUPIED);
        }
        let all: BTreeSet<_> = occ.sorted_indices().into_iter().collect();
        let esdf = build_esdf(&occ, &all, &cfg).unwrap();
        let (sites, domain) = esdf_sites_and_domain(&esdf);
        let truth = brute_force_esdf(&sites, &domain).unwrap();
        for (p, t) in domain.iter().zip(truth) {
            let got = esdf.get_voxel(p).unwrap().squared_distance as i64;
            voxels += 1;
            exact += (got == t) as usize;
            worst = worst.max(((got as f64).sqrt() - (t as f64).sqrt()).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ratio = exact as f64 / voxels as f64;
    ensure!(ratio >= 0.99, "only {:.4}% exact", 100.0 * ratio);
    ensure!(worst <= 1.0, "worst error {worst} voxels");
    ensure!(secs < 120.0, "took {secs:.1} s");
    Ok(format!("{voxels} voxels, {:.3}% exact, worst {worst:.3} voxels, {secs:.1} s", 100.0 * ratio))
}

// ---- end-to-end runs through the CLI

struct Run {
    dataset: PathBuf,
    out: PathBuf,
}

fn synth_and_integrate(root: &Path, scene: &str, frames: usize, size: [usize; 2], vs: f64, color: bool) -> Result<Run, String> {
    let dataset = root.join(format!("{scene}_data"));
    let out = root.join(format!("{scene}_{vs}"));
    sdfmap(&[
        "synth",
        scene,
        "--frames",
        &frames.to_string(),
        "--width",
        &size[0].to_string(),
        "--height",
        &size[1].to_string(),
        "--out",
        path_str(&dataset),
    ])?;
    let vs_arg = vs.to_string();
    let mut args = vec!["integrate", path_str(&dataset), "--voxel-size", &vs_arg, "--out", path_str(&out)];
    if color {
        args.push("--color");
    }
    sdfmap(&args)?;
    Ok(Run { dataset, out })
}

fn eval_json(run: &Run) -> Result<Value, String> {
    let text = sdfmap(&[
        "eval",
        path_str(&run.out.join("map.vxlf")),
        path_str(&run.dataset.join("scene.json")),
    ])?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn esdf_metric_error(room: &Run) -> Outcome {
    let report = eval_json(room)?;
    let median = report["esdf"]["median_abs"].as_f64().ok_or("no esdf median")?;
    let count = report["esdf"]["count"].as_u64().unwrap_or(0);
    ensure!(median <= 0.05, "median {median:.4} m");
    Ok(format!("median {median:.4} m over {count} voxels"))
}

/// Vertex positions from a binary PLY written by `integrate`.
fn read_ply_vertices(path: &Path) -> Result<Vec<Point3<f64>>, String> {
    let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
    let end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or("no PLY header")?
        + 11;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|e| e.to_string())?;
    let count: usize = header
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .ok_or("no vertex element")?
        .parse()
        .map_err(|_| "bad vertex count")?;
    let stride = if header.contains("property uchar red") { 15 } else { 12 };
    let f = |at: usize| f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64;
    Ok((0..count)
        .map(|i| {
            let at = end + i * stride;
            Point3::new(f(at), f(at + 4), f(at + 8))
        })
        .collect())
}

fn surface_accuracy(root: &Path) -> Outcome {
    let run = synth_and_integrate(root, "sphere_in_box", 24, [320, 240], 0.02, false)?;
    let scene = Scene::sphere_in_box();
    let vertices = read_ply_vertices(&run.out.join("mesh.ply"))?;
    let (sphere, center, radius) = scene
        .primitives
        .iter()
        .enumerate()
        .find_map(|(i, p)| match p.shape {
            Shape::Sphere { center, radius } => Some((i, Point3::from(center), radius)),
            _ => None,
        })
        .ok_or("scene has no sphere")?;
    let radial: Vec<f64> = vertices
        .iter()
        .filter(|v| scene.closest(v).0 == sphere && (*v - center).norm() < radius + 0.1)
        .map(|v| (v - center).norm() - radius)
        .collect();
    ensure!(radial.len() > 1000, "only {} sphere vertices", radial.len());
    let rms = (radial.iter().map(|e| e * e).sum::<f64>() / radial.len() as f64).sqrt();
    ensure!(rms <= 0.01, "sphere RMS {rms:.5} m");

    let vs = 0.05;
    let trunc = 4.0 * vs;
    let n = Vector3::new(0.2, -0.3, 1.0).normalize();
    let p0 = Point3::new(0.4, 0.4, 0.41);
    let mut tsdf: Layer<TsdfVoxel> = Layer::new(vs).unwrap();
    for x in 0..2 {
        for y in 0..2 {
            for z in 0..2 {
                let g = GridIndex::new(x, y, z);
                for (i, v) in tsdf.get_or_allocate_block(g).unwrap().voxels_mut().iter_mut().enumerate() {
                    let p = voxel_center_position(g, VoxelIndex::from_linear(i), vs);
                    *v = TsdfVoxel {
                        distance: (p - p0).dot(&n).clamp(-trunc, trunc) as f32,
                        weight: 1.0,
                    };
                }
            }
        }
    }
    let mesh = mesh_all(&tsdf, None, &MeshConfig::default());
    let plane_max = mesh
        .blocks()
        .flat_map(|(_, b)| b.vertices.iter())
        .map(|v| (v - p0).dot(&n).abs())
        .fold(0.0, f64::max);
    ensure!(mesh.num_triangles() > 0, "plane produced no mesh");
    ensure!(plane_max <= 1e-6 * trunc, "plane max error {plane_max:e} m");
    Ok(format!(
        "sphere RMS {rms:.5} m over {} vertices; plane max {plane_max:.2e} m",
        radial.len()
    ))
}

fn tsdf_functor_algebra() -> Outcome {
    let mut rng = StdRng::seed_from_u64(5);
    let max_weight = 100.0f32;
    let mut violations = Vec::new();
    for case in 0..100_000 {
        let trunc = rng.random_range(0.01f32..0.5);
        let voxel = if rng.random_bool(0.2) {
            TsdfVoxel::default()
        } else {
            TsdfVoxel {
                distance: rng.random_range(-trunc..=trunc),
                weight: rng.random_range(0.0f32..=max_weight),
            }
        };
        let d_p = rng.random_range(-3.0 * trunc as f64..3.0 * trunc as f64);
        let w = rng.random_range(0.01f32..2.0);
        match tsdf_update(voxel, d_p, w, trunc, max_weight) {
            None if d_p >= -(trunc as f64) => violations.push(format!("case {case}: skipped inside band")),
            None => {}
            Some(_) if d_p < -(trunc as f64) => violations.push(format!("case {case}: modified behind surface")),
            Some(v) => {
                if v.distance.abs() > trunc {
                    violations.push(format!("case {case}: distance {} beyond {trunc}", v.distance));
                }
                if v.weight > max_weight {
                    violations.push(format!("case {case}: weight {}", v.weight));
                }
                if voxel.weight == 0.0 && 2.0 * w <= max_weight {
                    let twice = tsdf_update(v, d_p, w, trunc, max_weight).unwrap();
                    if twice.weight != 2.0 * v.weight || twice.distance.to_bits() != v.distance.to_bits() {
                        violations.push(format!("case {case}: double integration {v:?} -> {twice:?}"));
                    }
                }
            }
        }
        if violations.len() > 5 {
            break;
        }
    }
    ensure!(violations.is_empty(), "{}", violations.join("; "));
    Ok("100000 cases, 0 violations".into())
}

fn occupancy_permutation_invariance() -> Outcome {
    let mut rng = StdRng::seed_from_u64(6);
    let params = OccupancyParams::default();
    let trunc = 0.2;
    let (mut unsaturated, mut violations) = (0usize, Vec::new());
    for case in 0..10_000 {
        let len = rng.random_range(1..=50);
        let hits: Vec<bool> = (0..len).map(|_| rng.random_bool(0.45)).collect();
        let mut reference: Option<f32> = None;
        for perm in 0..8 {
            let mut order = hits.clone();
            if perm > 0 {
                order.shuffle(&mut rng);
            }
            let (mut voxel, mut exact, mut saturated) = (OccupancyVoxel::default(), 0.0f64, false);
            for &hit in &order {
                let d_p = if hit { -0.05 } else { 0.5 };
                voxel = occupancy_update(voxel, d_p, trunc, &params).unwrap();
                exact += quantize_log_odds(if hit { params.hit } else { params.miss }) as f64;
                saturated |= exact < params.min as f64 || exact > params.max as f64;
            }
            let v = voxel.log_odds;
            if !(params.min..=params.max).contains(&v) {
                violations.push(format!("case {case}: {v} outside the clamp range"));
            }
            if !saturated {
                unsaturated += 1;
                if v as f64 != exact {
                    violations.push(format!("case {case}: {v} != sum {exact}"));
                }
                match reference {
                    Some(r) if r.to_bits() != v.to_bits() => violations.push(format!("case {case}: order changed result")),
                    _ => reference = Some(v),
                }
            }
        }
        if violations.len() > 5 {
            break;
        }
    }
    ensure!(violations.is_empty(), "{}", violations.join("; "));
    Ok(format!("10000 cases x 8 orders, {unsaturated} unsaturated runs exact, 0 violations"))
}

fn query_correctness() -> Outcome {
    let vs = 0.05;
    let mut occ = free_world([6; 3], vs);
    let (lo, hi) = ([20, 22, 21], [25, 26, 28]);
    let touched = paint_box(&mut occ, lo, hi, OCCUPIED);
    ensure!(!touched.is_empty(), "obstacle not painted");
    let all: BTreeSet<_> = occ.sorted_indices().into_iter().collect();
    let cfg = EsdfConfig::new(vs);
    let esdf = build_esdf(&occ, &all, &cfg).unwrap();
    let points = sample_points(&esdf, 10_000, SampleMode::Uncorrelated, 7).map_err(|e| e.to_string())?;

    let nearest = QueryOptions {
        interpolation: Interpolation::Nearest,
        ..QueryOptions::default()
    };
    let trilinear = QueryOptions::default();
    let near = query_batch(&esdf, &points, &nearest);
    let tri = query_batch(&esdf, &points, &trilinear);

    // nearest site centers form a box; the analytic direction points away
    // from its closest point
    let site_lo = Vector3::from(lo.map(|c| (c as f64 + 0.5) * vs));
    let site_hi = Vector3::from(hi.map(|c| (c as f64 - 0.5) * vs));
    let (mut known, mut graded, mut worst_angle, mut worst_tri) = (0, 0, 0.0f64, 0.0f64);
    for ((p, n), t) in points.iter().zip(&near).zip(&tri) {
        let g = GlobalIndex::from(p.coords.map(|c| (c / vs).floor() as i32));
        let oracle = esdf.get_voxel(&g).and_then(|v| esdf_distance(v, vs, cfg.interior_cap_voxels));
        ensure!(n.distance == oracle, "nearest mode at {p:?}: {:?} vs {oracle:?}", n.distance);
        let Some(d_near) = oracle else {
            ensure!(t.distance.is_none(), "trilinear known where nearest is not");
            continue;
        };
        known += 1;
        let d_tri = t.distance.ok_or("trilinear unknown where nearest is known")?;
        worst_tri = worst_tri.max((d_tri - d_near).abs());
        let away = p.coords - p.coords.zip_zip_map(&site_lo, &site_hi, |c, l, h| c.clamp(l, h));
        if away.norm() > 2.0 * vs {
            let grad = t.gradient.ok_or("missing gradient")?;
            let angle = (grad.dot(&away) / (grad.norm() * away.norm())).clamp(-1.0, 1.0).acos().to_degrees();
            worst_angle = worst_angle.max(angle);
            graded += 1;
        }
    }
    ensure!(known > 5000, "only {known} known points");
    ensure!(worst_tri <= vs, "trilinear differs by {worst_tri} m");
    ensure!(worst_angle <= 15.0, "gradient off by {worst_angle:.2} deg");

    let again = sample_points(&esdf, 10_000, SampleMode::Uncorrelated, 7).unwrap();
    ensure!(again == points, "sampling differs for the same seed");
    ensure!(query_batch(&esdf, &again, &trilinear) == tri, "repeat query differs");
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut StdRng::seed_from_u64(8));
    let shuffled: Vec<_> = order.iter().map(|&i| points[i]).collect();
    let results = query_batch(&esdf, &shuffled, &trilinear);
    ensure!(order.iter().zip(&results).all(|(&i, r)| *r == tri[i]), "reordering changed results");
    Ok(format!(
        "{known} known points exact in nearest mode, trilinear within {worst_tri:.4} m, gradient within {worst_angle:.2} deg on {graded}"
    ))
}

fn performance(room: &Run, root: &Path) -> Outcome {
    let timing = std::fs::read_to_string(room.out.join("timing.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<f64>> = timing
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    let tsdf_mean = rows.iter().map(|r| r[1]).sum::<f64>() / rows.len() as f64;
    let esdf_updates: Vec<f64> = rows.iter().map(|r| r[3]).filter(|&t| t > 0.0).collect();
    let esdf_mean = esdf_updates.iter().sum::<f64>() / esdf_updates.len().max(1) as f64;

    let csv = root.join("resolution.csv");
    sdfmap(&[
        "bench",
        "resolution",
        path_str(&room.dataset),
        "--voxel-sizes",
        "0.03,0.05,0.08,0.1",
        "--repeats",
        "2",
        "--out",
        path_str(&csv),
    ])?;
    let sweep = std::fs::read_to_string(&csv).map_err(|e| e.to_string())?;
    let totals: Vec<f64> = sweep
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    ensure!(totals.windows(2).all(|w| w[0] > w[1]), "timing not monotone in voxel size: {totals:?}");

    let snapshot = room.out.join("map.vxlf");
    let mut qps = HashMap::new();
    for mode in ["cor", "uncor"] {
        let text = sdfmap(&[
            "bench", "queries", path_str(&snapshot), "--count", "200000", "--mode", mode, "--seed", "1", "--repeats", "5",
        ])?;
        let v: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        qps.insert(mode, v["report"]["queries_per_second"].as_f64().ok_or("no throughput")?);
    }
    ensure!(qps["cor"] >= qps["uncor"], "correlated {:.0} q/s < uncorrelated {:.0} q/s", qps["cor"], qps["uncor"]);
    Ok(format!(
        "tsdf {tsdf_mean:.1} ms/frame, esdf {esdf_mean:.1} ms/update (single core, not gated); sweep {totals:?} ms; {:.2e} vs {:.2e} q/s",
        qps["cor"], qps["uncor"]
    ))
}

fn determinism(room: &Run, root: &Path) -> Outcome {
    let again = root.join("room_again");
    sdfmap(&[
        "integrate",
        path_str(&room.dataset),
        "--voxel-size",
        "0.05",
        "--color",
        "--out",
        path_str(&again),
    ])?;
    for file in ["map.vxlf", "mesh.ply"] {
        let a = std::fs::read(room.out.join(file)).map_err(|e| e.to_string())?;
        let b = std::fs::read(again.join(file)).map_err(|e| e.to_string())?;
        ensure!(a == b, "{file} differs between runs");
    }
    Ok("VXLF and PLY byte-identical across two runs".into())
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().expect("temp dir");
    let root = root.path();
    let room = synth_and_integrate(root, "room", 60, [320, 240], 0.05, true);

    let criteria: Vec<(&str, Check)> = vec![
        ("incremental ESDF equals batch", Box::new(incremental_equals_batch)),
        ("ESDF matches brute-force oracle", Box::new(oracle_accuracy)),
        ("room ESDF median error", Box::new(|| esdf_metric_error(room.as_ref()?))),
        ("mesh surface accuracy", Box::new(|| surface_accuracy(root))),
        ("TSDF functor algebra", Box::new(tsdf_functor_algebra)),
        ("occupancy permutation invariance", Box::new(occupancy_permutation_invariance)),
        ("query correctness", Box::new(query_correctness)),
        ("performance trends", Box::new(|| performance(room.as_ref()?, root))),
        ("determinism", Box::new(|| determinism(room.as_ref()?, root))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail} [{secs:.1} s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why} [{secs:.1} s]", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
