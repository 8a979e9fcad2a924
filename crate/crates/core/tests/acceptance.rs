//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs on the 10-clip benchmark (base seed 30) against a victim trained on
//! a disjoint 150-clip manifest and cached under `CARGO_TARGET_TMPDIR`.
//! Exits non-zero when a criterion fails only if `UAPSAM_ACCEPTANCE_STRICT`
//! is set; otherwise the verdicts are reported and the run succeeds.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use uapsam::attack::{
    apply, first_frame_probe, load_perturbations, optimize_samplewise, optimize_uap, save_perturbations,
    AttackConfig, Perturbation,
};
use uapsam::defenses::{
    corrupt, defense_sweep, prune_model, CorruptionKind, CorruptionSpec, DefenseKind, PruneMode,
};
use uapsam::evalharness::{
    avalanche_curve, cross_prompt_eval, evaluate, iou, mean_consecutive, mean_std, noise_baseline, seed_stability,
    Attack, Condition, EvalContext, EvalReport, EvalRow,
};
use uapsam::prompts::PromptKind;
use uapsam::segmodel::ModelParams;
use uapsam::synthclip::{Split, Task, VideoClip};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

struct Bench {
    params: ModelParams,
    train: Vec<VideoClip>,
    test: Vec<VideoClip>,
}

impl Bench {
    fn ctx(&self, seed: u64) -> EvalContext<'_> {
        EvalContext {
            params: &self.params,
            units: &self.test,
            dataset_id: "bench-30".into(),
            model_id: "victim".into(),
            task: Task::Video,
            optimization_seed: seed,
        }
    }
}

/// Lazily computed results reused across criteria.
struct Shared {
    uap: Option<Perturbation>,
}

fn drop_of(benign: f64, adv: f64) -> f64 {
    (benign - adv) / benign
}

fn c1_budget(b: &Bench) -> Verdict {
    let mut worst = Vec::new();
    for n in [4u32, 8, 10, 16] {
        let eps = n as f64 / 255.0;
        let cfg = AttackConfig {
            epsilon: eps,
            step_size: (2.0 / 255.0f64).min(eps),
            epochs: 2,
            frames_per_clip: 4,
            ..AttackConfig::universal()
        };
        let uap = optimize_uap(&b.params, &b.train, &cfg).unwrap().perturbation;
        let sw = optimize_samplewise(&b.params, &b.test[0], &b.train, &cfg).unwrap().perturbation;
        let dir = tempfile::tempdir().unwrap();
        for p in [uap, sw] {
            let path = dir.path().join("p.bin");
            save_perturbations(&path, std::slice::from_ref(&p)).unwrap();
            let back = load_perturbations(&path).unwrap().remove(0);
            let m = p.linf().max(back.linf());
            if m > eps {
                return verdict(false, format!("max|delta| {m:e} > eps {eps:e} ({n}/255, {:?})", p.mode));
            }
            let clip = if p.deltas.len() == 1 { &b.train[0] } else { &b.test[0] };
            let adv = apply(&clip.truncated(p.deltas.len().max(4)), &back).unwrap();
            for f in &adv.frames {
                if f.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return verdict(false, "adversarial pixel outside [0, 1]".into());
                }
            }
            worst.push(m / eps);
        }
    }
    let w = worst.iter().cloned().fold(0.0, f64::max);
    verdict(true, format!("8 runs (universal + sample-wise, 4 budgets); max|delta|/eps = {w:.6}, pixels in [0,1]"))
}

fn c2_gradients() -> Verdict {
    let mut worst = 0.0f64;
    let mut trials = 0;
    for obj in common::Objective::ALL {
        for t in 0..20u64 {
            let p = common::micro_problem(1000 + t);
            let (rel, _, _) = common::directional_error(&p, obj, t, 1e-4);
            worst = worst.max(rel);
            trials += 1;
        }
    }
    verdict(worst < 1e-4, format!("{trials} trials over sa(bce,mse), fa(contrastive,cosine), ma, total; worst rel err {worst:.2e}"))
}

fn c3_iou() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut axioms = true;
    for _ in 0..1000 {
        let a = common::random_mask(&mut rng, 8, 8);
        let b = common::random_mask(&mut rng, 8, 8);
        let v = iou(&a, &b).unwrap();
        worst = worst.max((v - common::iou_oracle(a.data(), b.data())).abs());
        axioms &= v == iou(&b, &a).unwrap() && (0.0..=1.0).contains(&v) && iou(&a, &a).unwrap() == 1.0;
    }
    verdict(worst <= 1e-12 && axioms, format!("1000 pairs, max |iou - oracle| = {worst:e}, axioms hold: {axioms}"))
}

fn c4_gate(b: &Bench) -> Verdict {
    let r = evaluate(&b.ctx(30), Attack::None).unwrap();
    verdict(r[0].miou >= 0.70, format!("held-out benign mIoU {:.4} (gate 0.70)", r[0].miou))
}

fn uap<'a>(b: &Bench, s: &'a mut Shared) -> &'a Perturbation {
    s.uap.get_or_insert_with(|| optimize_uap(&b.params, &b.train, &AttackConfig::universal()).unwrap().perturbation)
}

fn c5_effectiveness(b: &Bench, s: &mut Shared) -> Verdict {
    let p = uap(b, s).clone();
    let r = evaluate(&b.ctx(30), Attack::Learned(std::slice::from_ref(&p))).unwrap();
    let (ben, adv) = (r[0].miou, r[1].miou);
    let cfg = AttackConfig::samplewise();
    let sw: Vec<Perturbation> = b
        .test
        .iter()
        .map(|u| optimize_samplewise(&b.params, u, &b.train, &cfg).unwrap().perturbation)
        .collect();
    let r = evaluate(&b.ctx(30), Attack::Learned(&sw)).unwrap();
    let sw_adv = r[1].miou;
    verdict(
        adv <= 0.6 * ben && sw_adv <= 0.6 * ben,
        format!(
            "benign {ben:.4}; universal 10/255 {adv:.4} (ratio {:.3}); sample-wise 8/255 {sw_adv:.4} (ratio {:.3}); bound 0.6",
            adv / ben,
            sw_adv / ben
        ),
    )
}

fn c6_noise(b: &Bench, s: &mut Shared) -> Verdict {
    let p = uap(b, s).clone();
    let r = evaluate(&b.ctx(30), Attack::Learned(std::slice::from_ref(&p))).unwrap();
    let uap_drop = drop_of(r[0].miou, r[1].miou);
    let noise = noise_baseline(p.epsilon, 64, 64, 30);
    let r = evaluate(&b.ctx(30), Attack::Noise(&noise)).unwrap();
    let noise_drop = drop_of(r[0].miou, r[1].miou);
    verdict(
        uap_drop >= 2.0 * noise_drop && uap_drop > 0.0,
        format!("UAP relative drop {uap_drop:.4}, noise drop {noise_drop:.4} (need UAP >= 2x noise)"),
    )
}

fn c7_cross_prompt(b: &Bench, s: &mut Shared) -> Verdict {
    let p = uap(b, s).clone();
    let ctx = b.ctx(30);
    let (rows, _) =
        cross_prompt_eval(&ctx, Attack::Learned(std::slice::from_ref(&p)), &[PromptKind::Point, PromptKind::Box], 5)
            .unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in [PromptKind::Point, PromptKind::Box] {
        let of = |c: Condition| -> Vec<&EvalRow> { rows.iter().filter(|r| r.prompt_mode == kind && r.condition == c).collect() };
        let (ben, adv) = (of(Condition::Benign), of(Condition::Adversarial));
        let advs: Vec<f64> = adv.iter().map(|r| r.miou).collect();
        let (_, std) = mean_std(&advs);
        let min_drop = ben.iter().zip(&adv).map(|(b, a)| drop_of(b.miou, a.miou)).fold(f64::INFINITY, f64::min);
        ok &= std * 100.0 <= 10.0 && min_drop >= 0.25;
        parts.push(format!("{}: adv std {:.2} pts, min drop {:.3}", kind.as_str(), std * 100.0, min_drop));
    }
    verdict(ok, format!("{} (need std <= 10 pts, every drop >= 0.25)", parts.join("; ")))
}

fn c8_avalanche(b: &Bench, s: &mut Shared) -> Verdict {
    let p = uap(b, s).clone();
    let mut pts = Vec::new();
    for (i, u) in b.test.iter().enumerate() {
        pts.extend(avalanche_curve(&b.params, u, i, Some(&p)).unwrap());
    }
    let ben = mean_consecutive(&pts, Condition::Benign);
    let adv = mean_consecutive(&pts, Condition::Adversarial);
    verdict(ben - adv >= 0.1, format!("consecutive cosine benign {ben:.4}, adversarial {adv:.4}, gap {:.4} (need >= 0.1)", ben - adv))
}

fn c9_ablation(b: &Bench, s: &mut Shared) -> Verdict {
    let full = uap(b, s).clone();
    let ctx = b.ctx(30);
    let adv_of = |p: &Perturbation| evaluate(&ctx, Attack::Learned(std::slice::from_ref(p))).unwrap()[1].miou;
    let full_adv = adv_of(&full);
    let mut ok = true;
    let mut parts = vec![format!("full {full_adv:.4}")];
    for (name, which) in [("-sa", 0), ("-fa", 1), ("-ma", 2)] {
        let mut cfg = AttackConfig::universal();
        match which {
            0 => cfg.loss.w_sa = 0.0,
            1 => cfg.loss.w_fa = 0.0,
            _ => cfg.loss.w_ma = 0.0,
        }
        let a = adv_of(&optimize_uap(&b.params, &b.train, &cfg).unwrap().perturbation);
        ok &= full_adv <= a + 0.02;
        parts.push(format!("{name} {a:.4}"));
    }
    verdict(ok, format!("adversarial mIoU {} (full must be <= each + 0.02)", parts.join(", ")))
}

fn c10_first_frame(b: &Bench, s: &mut Shared) -> Verdict {
    let full = uap(b, s).clone();
    let ctx = b.ctx(30);
    let probe = first_frame_probe(&b.params, &b.train, &AttackConfig::universal()).unwrap().perturbation;
    let r_full = evaluate(&ctx, Attack::Learned(std::slice::from_ref(&full))).unwrap();
    let r_probe = evaluate(&ctx, Attack::Learned(std::slice::from_ref(&probe))).unwrap();
    let d_full = r_full[0].miou - r_full[1].miou;
    let d_probe = r_probe[0].miou - r_probe[1].miou;
    verdict(d_probe < d_full, format!("mIoU drop: first-frame probe {d_probe:.4}, full attack {d_full:.4} (need probe < full)"))
}

fn c11_defenses(b: &Bench, s: &mut Shared) -> Verdict {
    let mut problems = Vec::new();
    // Pruning zero counts against an independent sort oracle.
    for k in 1..=9 {
        let ratio = k as f64 / 10.0;
        let pruned = prune_model(&b.params, ratio, PruneMode::Global).unwrap();
        let mut mags: Vec<f64> = b
            .params
            .arrays
            .iter()
            .filter(|a| a.prunable)
            .flat_map(|a| a.tensor.data().iter().map(|v| v.abs()))
            .collect();
        let n = mags.len();
        // floor(k/10 * n) in exact integer arithmetic.
        let want = k * n / 10;
        mags.sort_by(|a, c| a.total_cmp(c));
        let zeros_before = b.params.arrays.iter().filter(|a| a.prunable).flat_map(|a| a.tensor.data()).filter(|v| **v == 0.0).count();
        let zeros_after = pruned.arrays.iter().filter(|a| a.prunable).flat_map(|a| a.tensor.data()).filter(|v| **v == 0.0).count();
        let threshold = mags[want.max(1) - 1];
        let kept_small = pruned
            .arrays
            .iter()
            .filter(|a| a.prunable)
            .flat_map(|a| a.tensor.data())
            .any(|v| *v != 0.0 && v.abs() < threshold);
        if zeros_after != want.max(zeros_before) || kept_small {
            problems.push(format!("ratio {ratio}: {zeros_after} zeros, oracle {want}"));
        }
        let untouched = b.params.arrays.iter().zip(&pruned.arrays).filter(|(a, _)| !a.prunable).all(|(a, p)| a.tensor == p.tensor);
        if !untouched {
            problems.push(format!("ratio {ratio}: non-prunable array changed"));
        }
    }
    // Severity 0 is the identity.
    for f in &b.test[0].frames {
        for kind in [CorruptionKind::Spatter, CorruptionKind::Saturate] {
            let out = corrupt(f, &CorruptionSpec { kind, severity: 0, seed: 9 }).unwrap();
            if out.data().iter().zip(f.data()).any(|(a, c)| a.to_bits() != c.to_bits()) {
                problems.push(format!("{kind:?} severity 0 changed a pixel"));
            }
        }
    }
    // Sweep level-0 rows equal the undefended evaluation.
    let p = uap(b, s).clone();
    let ctx = b.ctx(30);
    let attack = Attack::Learned(std::slice::from_ref(&p));
    let base = evaluate(&ctx, attack).unwrap();
    for d in [DefenseKind::Prune, DefenseKind::Spatter, DefenseKind::Saturate] {
        let rows = defense_sweep(&ctx, attack, d, &[0.0], PruneMode::Global, 30).unwrap();
        let strip = |r: &EvalRow| EvalRow { defense_level: None, ..r.clone() };
        if rows.iter().map(strip).collect::<Vec<_>>() != base {
            problems.push(format!("{d:?} level-0 rows differ from undefended rows"));
        }
    }
    let ok = problems.is_empty();
    verdict(
        ok,
        if ok {
            "prune counts exact for 0.1..0.9, severity-0 identity bit-exact, level-0 sweep rows equal undefended rows".into()
        } else {
            problems.join("; ")
        },
    )
}

fn c12_determinism(b: &Bench, s: &mut Shared) -> Verdict {
    let first = uap(b, s).clone();
    let second = optimize_uap(&b.params, &b.train, &AttackConfig::universal()).unwrap().perturbation;
    let ctx = b.ctx(30);
    let report = |p: &Perturbation| {
        let (rows, summaries) =
            cross_prompt_eval(&ctx, Attack::Learned(std::slice::from_ref(p)), &[PromptKind::Point], 2).unwrap();
        EvalReport { rows, summaries, seed: 30, config_hash: p.config_hash.clone(), ..Default::default() }.to_csv().unwrap()
    };
    let same = report(&first) == report(&second);
    let seeds: Vec<u64> = (30..35).collect();
    let st = seed_stability(&b.params, &b.train, &ctx, &AttackConfig::universal(), &seeds).unwrap();
    let adv: Vec<String> = st.adversarial_miou.iter().map(|v| format!("{v:.4}")).collect();
    verdict(
        same && st.std * 100.0 <= 5.0,
        format!(
            "repeat run CSV identical: {same}; 5-seed adversarial mIoU [{}], std {:.2} pts (need <= 5)",
            adv.join(", "),
            st.std * 100.0
        ),
    )
}

fn main() {
    // `cargo test` passes filter arguments; listing support keeps
    // `--list` from running the suite.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let start = Instant::now();
    eprintln!("acceptance: preparing victim model (cached after the first run)");
    let params = common::victim();
    let ds = common::benchmark();
    let bench = Bench {
        params,
        train: ds.units(Split::Train, 15),
        test: ds.units(Split::Test, 15),
    };
    let mut shared = Shared { uap: None };
    type Criterion = Box<dyn Fn(&Bench, &mut Shared) -> Verdict>;
    let criteria: Vec<(&str, Criterion)> = vec![
        ("budget exactness", Box::new(|b, _| c1_budget(b))),
        ("gradient oracle", Box::new(|_, _| c2_gradients())),
        ("IoU oracle", Box::new(|_, _| c3_iou())),
        ("benign competence gate", Box::new(|b, _| c4_gate(b))),
        ("attack effectiveness", Box::new(c5_effectiveness)),
        ("noise floor", Box::new(c6_noise)),
        ("cross-prompt stability", Box::new(c7_cross_prompt)),
        ("avalanche effect", Box::new(c8_avalanche)),
        ("ablation dominance", Box::new(c9_ablation)),
        ("first-frame probe", Box::new(c10_first_frame)),
        ("defense harness", Box::new(c11_defenses)),
        ("determinism and seed stability", Box::new(c12_determinism)),
    ];
    let mut passed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(|| f(&bench, &mut shared)))
            .unwrap_or_else(|e| {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                verdict(false, format!("error: {}", msg.unwrap_or_default()))
            });
        passed += v.pass as usize;
        println!(
            "[{}] C{:<2} {}: {} ({:.0}s)",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            name,
            v.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {passed}/{} criteria passed in {:.0}s", criteria.len(), start.elapsed().as_secs_f64());
    if passed < criteria.len() && std::env::var_os("UAPSAM_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
