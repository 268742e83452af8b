use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context;
use dmcanc::archive::{load_compensation, load_scene, save_compensation, save_scene};
use dmcanc::report::{
    write_events, write_run_log, write_spectra, write_weight_trace, write_weights, SPECTRUM_CONVENTION,
};
use dmcanc::scene::perturb_estimates;
use dmcanc::{
    estimate_compensation, factorable_scene, power_spectrum, run_with, synthesize_scene, CompensationSet64,
    PathSynthesisSpec, RunLog64, Scene64,
};

use crate::scenario::{config_hash, Overrides, ScenarioFile};

pub struct RunArgs {
    pub scenario: PathBuf,
    pub out_dir: Option<PathBuf>,
    pub overrides: Overrides,
}

/// Header lines shared by every file of one campaign entry.
fn provenance(run_id: &str, resolved: &str) -> Vec<(String, String)> {
    vec![
        ("generator".into(), format!("dmcanc {}", env!("CARGO_PKG_VERSION"))),
        ("run_id".into(), run_id.into()),
        ("config_hash".into(), config_hash(resolved)),
        ("config".into(), resolved.trim_end().into()),
    ]
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

pub fn run(args: RunArgs) -> anyhow::Result<()> {
    let file = ScenarioFile::load(&args.scenario, &args.overrides)?;
    let out_dir = args.out_dir.or_else(|| file.output.dir.clone()).unwrap_or_else(|| PathBuf::from("dmcanc-out"));
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let base = file.sim_config(0);
    let scene: Scene64 = base.scene.build(base.nodes, base.fs, base.compensation_len)?;
    let needs_comp = file.campaign.iter().any(|c| c.algorithm.needs_compensation());
    let comp: Option<CompensationSet64> = match (&file.compensation, needs_comp) {
        (Some(path), _) => {
            let c = load_compensation(path)?;
            if c.nodes() != scene.nodes() {
                return Err(crate::ConfigError(format!(
                    "compensation archive is for K = {}, scene has K = {}",
                    c.nodes(),
                    scene.nodes()
                ))
                .into());
            }
            Some(c)
        }
        (None, true) => Some(estimate_compensation(&scene, base.compensation_len)?),
        (None, false) => None,
    };
    eprintln!(
        "scene: K = {}, L_s = {}, {} campaign entries -> {}",
        scene.nodes(),
        scene.secondary_len(),
        file.campaign.len(),
        out_dir.display()
    );

    let results: Vec<anyhow::Result<()>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..file.campaign.len())
            .map(|i| {
                let (file, scene, comp, out_dir) = (&file, &scene, comp.as_ref(), &out_dir);
                s.spawn(move || run_entry(file, i, scene, comp, out_dir))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("campaign thread panicked")).collect()
    });
    // report the first failure in campaign order
    results.into_iter().collect::<anyhow::Result<Vec<()>>>()?;
    Ok(())
}

fn run_entry(
    file: &ScenarioFile,
    i: usize,
    scene: &Scene64,
    comp: Option<&CompensationSet64>,
    out_dir: &Path,
) -> anyhow::Result<()> {
    let cfg = file.sim_config(i);
    let run_id = cfg.run.run_id();
    let resolved = file.resolved_toml(i);
    let header = provenance(&run_id, &resolved);
    let noise = cfg.noise.build(cfg.fs)?;
    let comp = comp.filter(|_| cfg.run.algorithm.needs_compensation());
    let log: RunLog64 = run_with(&cfg, scene, comp, noise).with_context(|| format!("campaign entry `{run_id}`"))?;

    let path = |kind: &str| out_dir.join(format!("{run_id}_{kind}.csv"));
    write_run_log(create(&path("run"))?, &header, &log, cfg.anse_window, file.output.log_stride)?;
    let mut ev_header = header.clone();
    ev_header.push(("communication_rounds".into(), log.event_count.to_string()));
    write_events(create(&path("events"))?, &ev_header, &log.events, cfg.nodes, cfg.fs)?;
    write_weights(create(&path("weights"))?, &header, &log.final_states)?;
    write_weight_trace(create(&path("weight_norms"))?, &header, &log.weight_norms)?;

    let seg = ((file.output.spectrum_seconds * cfg.fs).round() as usize).min(log.samples());
    let start = log.samples() - seg;
    let mut spectra = Vec::new();
    for (prefix, signals) in [("e", &log.errors), ("d", &log.disturbances)] {
        for (k, sig) in signals.iter().enumerate() {
            match power_spectrum(&sig[start..], cfg.fs) {
                Ok(s) => spectra.push((format!("{prefix}_{k}"), s)),
                Err(e) => {
                    eprintln!("{run_id}: spectrum skipped: {e}");
                    break;
                }
            }
        }
    }
    if !spectra.is_empty() {
        let mut sp_header = header.clone();
        sp_header.push(("spectrum".into(), SPECTRUM_CONVENTION.into()));
        sp_header.push(("spectrum_segment".into(), format!("samples {start}..{}", log.samples())));
        write_spectra(create(&path("spectrum"))?, &sp_header, &spectra)?;
    }

    let final_anse = if log.samples() >= cfg.anse_window {
        log.anse(log.samples(), cfg.anse_window)?.map_or("undefined".to_string(), |a| format!("{a:.2} dB"))
    } else {
        "n/a".to_string()
    };
    eprintln!("{run_id}: {} samples, final ANSE {final_anse}, {} communication rounds", log.samples(), log.event_count);
    Ok(())
}

pub struct SceneArgs {
    pub spec: PathSynthesisSpec,
    pub nodes: usize,
    pub fs: f64,
    pub factorable: Option<usize>,
    pub mismatch_db: Option<f64>,
    pub mismatch_seed: u64,
    pub out: PathBuf,
    pub generators_out: Option<PathBuf>,
}

pub fn make_scene(args: SceneArgs) -> anyhow::Result<()> {
    let (scene, generators): (Scene64, _) = match args.factorable {
        Some(lc) => {
            let f = factorable_scene(&args.spec, args.nodes, lc, args.fs)?;
            (f.scene, Some(f.generators))
        }
        None => (synthesize_scene(&args.spec, args.nodes, args.fs)?, None),
    };
    let scene = match args.mismatch_db {
        Some(db) => perturb_estimates(&scene, db, args.mismatch_seed)?,
        None => scene,
    };
    save_scene(&args.out, &scene)?;
    if let (Some(path), Some(g)) = (&args.generators_out, &generators) {
        save_compensation(path, g)?;
    }

    let (own, cross) = scene.coupling_energy();
    println!(
        "wrote {} (K = {}, L_s = {}, fs = {} Hz)",
        args.out.display(),
        scene.nodes(),
        scene.secondary_len(),
        scene.fs()
    );
    println!("{:>6} {:>12} {:>12}", "node", "|s_kk|", "sum |s_mk|^2");
    for k in 0..scene.nodes() {
        let cross_k: f64 = (0..scene.nodes()).filter(|&m| m != k).map(|m| scene.secondary().get(m, k).energy()).sum();
        println!("{k:>6} {:>12.6} {:>12.6}", scene.secondary().get(k, k).norm(), cross_k);
    }
    let ratio = if own > 0.0 { 10.0 * (cross / own).log10() } else { f64::NAN };
    println!("self energy {own:.6}, cross energy {cross:.6}, cross/self {ratio:.2} dB");
    Ok(())
}

pub fn train_compensation(scene_path: &Path, compensation_len: usize, out: &Path) -> anyhow::Result<()> {
    let scene: Scene64 = load_scene(scene_path)?;
    let set = estimate_compensation(&scene, compensation_len)?;
    save_compensation(out, &set)?;
    println!("wrote {} (K = {}, L_c = {compensation_len})", out.display(), set.nodes());
    println!("{:>4} {:>4} {:>14} {:>14}", "m", "k", "residual", "relative");
    for ((m, k), _, residual) in set.iter() {
        let norm = scene.secondary_est().get(m, k).norm();
        let rel = if norm > 0.0 { residual / norm } else { f64::NAN };
        println!("{m:>4} {k:>4} {residual:>14.6e} {rel:>14.6e}");
    }
    Ok(())
}
