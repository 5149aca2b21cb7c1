//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines show up in plain `cargo test` output.

#[path = "../../core/tests/common/oracle.rs"]
mod oracle;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use gmmd_core::anchor::{build_anchor_model, gram_vectors, named_refs};
use gmmd_core::backbone::{resize, PixelPatch, PIXEL_PATCH_ID};
use gmmd_core::degrade::table::{row, severity_params, LEVEL_COUNT, TYPE_COUNT};
use gmmd_core::experiments::run_inversion_experiment;
use gmmd_core::gram::{gram_from_cnn, gram_from_tokens, vectorize_upper_tri};
use gmmd_core::kernel::median_heuristic_gamma;
use gmmd_core::protocol::{run_meta_protocol, AnchorMode, GammaPolicy, MetricConfig, ProtocolOptions};
use gmmd_core::rank::{kendall_tau, spearman_rho};
use gmmd_core::synthetic::{family_a, smoothed_family_a, texture_a};
use gmmd_core::{
    ActivationTensor, AnchorOptions, Error, FeatureProvider, KernelKind, KernelSpec, PairwiseTable,
    Reduction,
};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-300)
}

fn mmd_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = oracle::rng(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (n, m, d) = (r.random_range(2..=32), r.random_range(2..=32), r.random_range(1..=16));
        let a = oracle::random_set(&mut r, n, d);
        let e = oracle::random_set(&mut r, m, d);
        let gamma = r.random_range(0.01..1.0);
        let rbf = PairwiseTable::compute(&a, &e, KernelKind::Rbf, Reduction::Serial).map_err(|x| x.to_string())?;
        let got = rbf.mmd2_unbiased(&KernelSpec::rbf(gamma).unwrap()).unwrap().mmd2;
        worst = worst.max(rel_err(got, oracle::mmd2_unbiased(&a, &e, oracle::rbf(gamma))));
        let poly = PairwiseTable::compute(&a, &e, KernelKind::Polynomial, Reduction::Serial).map_err(|x| x.to_string())?;
        let got = poly.mmd2_unbiased(&KernelSpec::Polynomial).unwrap().mmd2;
        worst = worst.max(rel_err(got, oracle::mmd2_unbiased(&a, &e, oracle::cubic)));
    }
    let took = start.elapsed();
    check(
        worst <= 1e-10 && took < Duration::from_secs(10),
        format!("1000 pairs x 2 kernels, worst rel err {worst:.2e} (<= 1e-10), {:.2}s (< 10s)", took.as_secs_f64()),
    )
}

fn gram_correctness() -> Outcome {
    let mut r = oracle::rng(2025);
    let (mut worst, mut worst_scale): (f64, f64) = (0.0, 0.0);
    let mut perm_exact = true;
    for _ in 0..300 {
        let d = r.random_range(1..=8);
        let (h, w) = (r.random_range(1..=8), r.random_range(1..=8));
        let n = h * w;
        let vals: Vec<f64> = (0..d * n).map(|_| r.random_range(-3.0..3.0)).collect();
        let cnn = gram_from_cnn(&ActivationTensor::cnn(d, h, w, vals.clone()).unwrap()).unwrap();
        let tok_vals: Vec<f64> = (0..n * d).map(|i| vals[(i % d) * n + i / d]).collect();
        let tok = gram_from_tokens(&ActivationTensor::tokens(n, d, tok_vals.clone()).unwrap()).unwrap();
        let want_cnn = oracle::gram_cnn(&vals, d, h, w);
        let want_tok = oracle::gram_tokens(&tok_vals, n, d);
        for i in 0..d {
            for j in 0..d {
                worst = worst.max((cnn.get(i, j) - want_cnn[i][j]).abs());
                worst = worst.max((tok.get(i, j) - want_tok[i][j]).abs());
            }
        }
        // Shuffle positions (CNN) and tokens.
        let mut order: Vec<usize> = (0..n).collect();
        for k in (1..n).rev() {
            order.swap(k, r.random_range(0..=k));
        }
        let shuffled: Vec<f64> = (0..d).flat_map(|c| order.iter().map(move |&p| (c, p))).map(|(c, p)| vals[c * n + p]).collect();
        let g = gram_from_cnn(&ActivationTensor::cnn(d, h, w, shuffled).unwrap()).unwrap();
        perm_exact &= vectorize_upper_tri(&g) == vectorize_upper_tri(&cnn);
        let shuffled_tok: Vec<f64> = order.iter().flat_map(|&p| tok_vals[p * d..(p + 1) * d].to_vec()).collect();
        let g = gram_from_tokens(&ActivationTensor::tokens(n, d, shuffled_tok).unwrap()).unwrap();
        perm_exact &= vectorize_upper_tri(&g) == vectorize_upper_tri(&tok);
        // Scaling law.
        let alpha = r.random_range(-3.0..3.0);
        let scaled: Vec<f64> = vals.iter().map(|v| alpha * v).collect();
        let g = gram_from_cnn(&ActivationTensor::cnn(d, h, w, scaled).unwrap()).unwrap();
        for i in 0..d {
            for j in 0..d {
                worst_scale = worst_scale.max((g.get(i, j) - alpha * alpha * cnn.get(i, j)).abs());
            }
        }
    }
    check(
        worst <= 1e-12 && worst_scale <= 1e-12 && perm_exact,
        format!(
            "300 tensors, oracle err {worst:.1e}, alpha^2 err {worst_scale:.1e} (<= 1e-12), permutation invariance exact: {perm_exact}"
        ),
    )
}

fn resolution_invariance() -> Outcome {
    let pp = PixelPatch::default();
    let base = texture_a(128, 128, 9);
    let mut lens = Vec::new();
    for (w, h) in [(128, 128), (64, 64), (150, 90)] {
        let img = resize(&base, w, h).map_err(|e| e.to_string())?;
        for layer in 1..=pp.layer_count() {
            let g = gram_from_cnn(&pp.extract(layer, &img).map_err(|e| e.to_string())?).unwrap();
            lens.push(vectorize_upper_tri(&g).len());
        }
    }
    check(
        lens.iter().all(|&l| l == 6),
        format!("3 resolutions x 3 layers, vector lengths {lens:?} (d=3, d(d+1)/2 = 6)"),
    )
}

fn rank_statistics() -> Outcome {
    let mut cases = 0;
    for n in 2..=6 {
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        for p in oracle::permutations(n) {
            let ys: Vec<f64> = p.iter().map(|&i| i as f64).collect();
            if spearman_rho(&xs, &ys).unwrap() != oracle::spearman(&xs, &ys)
                || kendall_tau(&xs, &ys).unwrap() != oracle::kendall(&xs, &ys)
            {
                return Err(format!("mismatch on permutation {p:?}"));
            }
            cases += 1;
        }
    }
    let mut r = oracle::rng(2026);
    let mut tied = 0;
    while tied < 100 {
        let xs: Vec<f64> = (0..10).map(|_| f64::from(r.random_range(0..4u8))).collect();
        let ys: Vec<f64> = (0..10).map(|_| f64::from(r.random_range(0..4u8))).collect();
        if xs.iter().all(|&v| v == xs[0]) || ys.iter().all(|&v| v == ys[0]) {
            continue;
        }
        if spearman_rho(&xs, &ys).unwrap() != oracle::spearman(&xs, &ys)
            || kendall_tau(&xs, &ys).unwrap() != oracle::kendall(&xs, &ys)
        {
            return Err(format!("mismatch on tied series {xs:?} / {ys:?}"));
        }
        tied += 1;
    }
    Ok(format!("{cases} permutations (n <= 6) and {tied} tied n=10 series, exact equality"))
}

fn degradation_table() -> Outcome {
    let mut cells = 0;
    for (t, tag, row_cells) in oracle::severity_fixture() {
        let r = row(t).map_err(|e| e.to_string())?;
        if r.kadid_tag != tag {
            return Err(format!("type {t}: tag {} vs {tag}", r.kadid_tag));
        }
        for (l, want) in (1..=LEVEL_COUNT).zip(row_cells) {
            let got = severity_params(t, l).unwrap();
            for (name, w) in r.params.iter().zip(&want) {
                if got[name].to_bits() != w.to_bits() {
                    return Err(format!("type {t} level {l} {name}: {} vs {w}", got[name]));
                }
            }
            cells += 1;
        }
    }
    let spot = |t: u8, p: &str| (severity_params(t, 1).unwrap()[p], severity_params(t, 10).unwrap()[p]);
    let spots = [spot(1, "sigma"), spot(13, "quality"), spot(8, "bits"), spot(9, "alpha")];
    let want = [(0.002, 0.022), (95.0, 72.0), (8.0, 5.0), (0.020, 0.110)];
    check(
        cells == usize::from(TYPE_COUNT) * usize::from(LEVEL_COUNT) && spots == want,
        format!("{cells} cells bit-equal; noise/JPEG/quantization/fog endpoints {spots:?}"),
    )
}

fn desk_monotonicity() -> Outcome {
    let refs = family_a("ref", 50, 64, 7);
    let pp = PixelPatch::default();
    let config = MetricConfig {
        backbone_id: PIXEL_PATCH_ID.into(),
        layer_index: 1,
        kernel: KernelKind::Rbf,
        gamma_policy: GammaPolicy::MedianMultiple { factor: 1.0 },
        anchor_mode: AnchorMode::Reference,
    };
    let options = ProtocolOptions {
        types: vec![1, 8, 13, 14],
        seed: 7,
        ..Default::default()
    };
    let r = run_meta_protocol(&refs, &[], &config, &pp, &options).map_err(|e| e.to_string())?;
    let rhos: Vec<(u8, Option<f64>)> = r.per_type.values().map(|t| (t.type_id, t.rho)).collect();
    check(
        rhos.len() == 4 && rhos.iter().all(|(_, rho)| rho.is_some_and(|v| v >= 0.9)),
        format!("toy L1, 50 textures, reference anchor; per-type rho {rhos:?} (each >= 0.9)"),
    )
}

fn inversion_property() -> Outcome {
    let pp = PixelPatch::default();
    let anchor_imgs = family_a("anchor", 50, 64, 100);
    let anchor = build_anchor_model(&pp, "builtin", 1, &anchor_imgs, &AnchorOptions::default()).map_err(|e| e.to_string())?;
    let real = family_a("real", 50, 64, 200);
    let synthetic = smoothed_family_a("syn", 50, 64, 300);
    let vec_of = |imgs: &[gmmd_core::NamedImage]| gram_vectors(&pp, 1, &named_refs(imgs));
    let (sv, rv) = (vec_of(&synthetic).unwrap(), vec_of(&real).unwrap());
    let policies: Vec<GammaPolicy> = [0.1, 0.5, 1.0, 2.0, 10.0]
        .map(|factor| GammaPolicy::MedianMultiple { factor })
        .to_vec();
    let results = run_inversion_experiment(&anchor, &sv, &rv, KernelKind::Rbf, &policies).map_err(|e| e.to_string())?;
    let shown: Vec<String> = results
        .iter()
        .map(|r| format!("{:.3e} ({:.3e} / {:.3e})", r.ratio, r.score_synthetic, r.score_real))
        .collect();
    check(
        results.iter().all(|r| r.ratio > 1.0 && !r.inverted),
        format!(
            "ratio (synthetic / real, scores clamped at 0) at 0.1/0.5/1/2/10 x gamma_med: {} (all > 1)",
            shown.join(", ")
        ),
    )
}

fn median_heuristic() -> Outcome {
    let g = median_heuristic_gamma(&[[0.0], [1.0], [3.0]], 100, 0).map_err(|e| e.to_string())?;
    let degenerate = median_heuristic_gamma(&[[2.0, 1.0]; 4], 100, 0);
    check(
        g == 0.125 && matches!(degenerate, Err(Error::DegenerateBandwidth)),
        format!("gamma({{0,1,3}}) = {g}; identical anchors -> {degenerate:?}"),
    )
}

fn run_grid(spec: &Path, out: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_gmmd"))
        .args(["grid", "--spec"])
        .arg(spec)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("gmmd grid failed: {}", String::from_utf8_lossy(&o.stderr)));
    }
    Ok(())
}

fn grid_determinism() -> Outcome {
    let d = tempfile::tempdir().map_err(|e| e.to_string())?;
    let refs = d.path().join("refs");
    for n in family_a("ref", 8, 48, 11) {
        gmmd_io::save_png(&refs.join(format!("{}.png", n.id)), &n.image).map_err(|e| e.to_string())?;
    }
    let spec = d.path().join("run.json");
    std::fs::write(
        &spec,
        r#"{"refs": "refs", "backbones": ["pixel-patch", "toy:toy-b:2"], "types": [1, 14], "seed": 3}"#,
    )
    .map_err(|e| e.to_string())?;
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    run_grid(&spec, &a)?;
    run_grid(&spec, &b)?;
    let mut compared = Vec::new();
    for name in ["meta_results.csv", "cell_scores.csv", "top_k.csv"] {
        let x = std::fs::read(a.join(name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(name)).map_err(|e| e.to_string())?;
        if x != y {
            return Err(format!("{name} differs between runs"));
        }
        compared.push(format!("{name} ({} bytes)", x.len()));
    }
    Ok(format!("two runs, byte-identical: {}", compared.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("mmd-oracle-equivalence", mmd_oracle),
        ("gram-correctness", gram_correctness),
        ("resolution-invariance", resolution_invariance),
        ("rank-statistics", rank_statistics),
        ("degradation-table-fidelity", degradation_table),
        ("desk-monotonicity", desk_monotonicity),
        ("inversion-property", inversion_property),
        ("median-heuristic", median_heuristic),
        ("grid-determinism", grid_determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
