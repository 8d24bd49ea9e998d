//! Runs the synthetic suppression benchmark and prints metrics with and
//! without the adaptive subtraction.
//!
//! Usage: `cargo run --release -p pa-core --example suppression [SEED]`

use std::time::Instant;

use pa_core::pipeline::{self, EngineConfig};
use pa_core::synth::{generate_synthetic_dataset, SynthSpec};

fn main() -> pa_core::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(SynthSpec::BENCHMARK_SEED);
    let t = Instant::now();
    let mut spec = SynthSpec::suppression_benchmark(seed);
    let env = |k: &str| std::env::var(k).ok();
    let pair = |v: String| -> [usize; 2] {
        let mut it = v.split(',').map(|x| x.parse().unwrap());
        [it.next().unwrap(), it.next().unwrap()]
    };
    if let Some(g) = env("GRID") {
        spec.grid = pair(g);
    }
    if let Some(n) = env("NPS") {
        let n: usize = n.parse().unwrap();
        spec.pseudo.truncate(n.max(1));
        while spec.pseudo.len() < n {
            spec.pseudo.push(spec.pseudo[0].clone());
        }
        if n == 0 {
            spec.pseudo.clear();
        }
    }
    for (i, p) in spec.pseudo.iter_mut().enumerate() {
        // PS_X applies to every offset, PS<i>_X to offset i only
        let knob = |k: &str| env(&format!("PS{i}_{k}")).or_else(|| env(&format!("PS_{k}")));
        if let Some(v) = knob("SPREAD") {
            p.spread = v.parse().unwrap();
        }
        if let Some(v) = knob("PROB") {
            p.probability = v.parse().unwrap();
        }
        if let Some(v) = knob("BLOB") {
            p.blob = pair(v);
        }
        if let Some(v) = knob("MAG") {
            p.magnitude = v.parse().unwrap();
        }
    }
    if let Some(v) = env("DEF_BLOB") {
        spec.defect.blob = pair(v);
    }
    if let Some(v) = env("TOKEN_NOISE") {
        spec.token_noise = v.parse().unwrap();
    }
    if let Some(v) = env("PIXEL_SCALE") {
        spec.pixel_scale = v.parse().unwrap();
    }
    if let Some(v) = env("SIGMA") {
        spec.sigma_n = v.parse().unwrap();
    }
    eprintln!("{spec:?}");
    let synth = generate_synthetic_dataset(&spec)?;
    let ds = &synth.dataset;
    let config = EngineConfig {
        seed,
        ..EngineConfig::default()
    };
    let selection = pipeline::select_stage(ds, &config)?;
    let sel: Vec<String> = selection.ranking.selected_ids();
    let pseudo_sel = sel
        .iter()
        .filter(|id| {
            let i = ds.image_index(id).unwrap();
            synth.patch_labels[i].contains(&pa_core::synth::PatchLabel::Pseudo)
        })
        .count();
    let defect_sel = sel
        .iter()
        .filter(|id| synth.image_labels[ds.image_index(id).unwrap()])
        .count();
    println!(
        "selected {} images: {pseudo_sel} with pseudo, {defect_sel} defective",
        sel.len()
    );
    println!(
        "variance: {:?}, plan: {:?}",
        selection.variance,
        selection.plan.as_ref().map(|p| p.strategy)
    );
    let banks = pipeline::build_banks(ds, &config, &selection)?;
    println!("banks built in {:.1?}", t.elapsed());
    let responses = (0..ds.len())
        .map(|i| pipeline::image_responses(ds, i, &banks, &config))
        .collect::<pa_core::Result<Vec<_>>>()?;
    println!("responses in {:.1?}", t.elapsed());

    let mut baseline = config.clone();
    baseline.toggles.pad_enabled = false;
    for (name, cfg) in [("baseline", &baseline), ("pad", &config)] {
        let outcome = pipeline::finalize_all(&responses, cfg)?;
        let pixels = pipeline::render_all(ds, &outcome.maps, cfg.smoothing_sigma)?;
        let m = pipeline::evaluate_outcome(ds, &outcome, &pixels, cfg)?;
        if env("DIAG").is_some() {
            use pa_core::synth::PatchLabel;
            let mut by_label = [(0.0, 0usize); 3];
            for (map, labels) in outcome.maps.iter().zip(&synth.patch_labels) {
                for (&v, l) in map.grid.values.iter().zip(labels) {
                    let k = match l {
                        PatchLabel::Normal => 0,
                        PatchLabel::Pseudo => 1,
                        PatchLabel::Defect => 2,
                    };
                    by_label[k].0 += v;
                    by_label[k].1 += 1;
                }
            }
            let means = by_label.map(|(s, n)| s / n.max(1) as f64);
            println!(
                "{name:>8}: patch means normal {:.4} pseudo {:.4} defect {:.4}",
                means[0], means[1], means[2]
            );
            // groups: (defective, with pseudo)
            let mut groups = [[(0.0, 0usize); 2]; 2];
            for (i, &score) in outcome.image_scores.iter().enumerate() {
                let pseudo = synth.patch_labels[i].contains(&PatchLabel::Pseudo);
                let g = &mut groups[synth.image_labels[i] as usize][pseudo as usize];
                g.0 += score;
                g.1 += 1;
            }
            for (d, row) in groups.iter().enumerate() {
                for (p, &(s, n)) in row.iter().enumerate() {
                    println!(
                        "{name:>8}: images defect={d} pseudo={p}: n={n} mean {:.4}",
                        s / n.max(1) as f64
                    );
                }
            }
        }
        println!(
            "{name:>8}: image AUROC {:.4}  pixel AUROC {:.4}  PRO {:.4}",
            m.auroc_cls.unwrap_or(f64::NAN),
            m.auroc_segm.unwrap_or(f64::NAN),
            m.pro_segm.unwrap_or(f64::NAN)
        );
    }
    println!("total {:.1?}", t.elapsed());
    Ok(())
}
