use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use polarlt::analysis::slice::{evaluate as evaluate_slice, SliceExpr, SliceImage};
use polarlt::analysis::{
    apply_descatter, build_observation, epipolar_image, fit_descatter, pca, psnr,
    synthetic_composite, DescatterModel, DescatterOptions, FeatureSet, PolarimetricImage,
};
use polarlt::decomposition::{decompose_tensor, ScalarMap};
use polarlt::ellipsometry::{
    capture, design_matrix_with, drr_schedule, reconstruct, AngleSchedule, MeasurementSet,
    OpticalPath, SensorMode,
};
use polarlt::export::{write_csv, write_pgm, BitDepth};
use polarlt::learning::{evaluate, expected_loss, learn, EnsembleSpec, TrainingConfig};
use polarlt::polarization::MuellerMatrix;
use polarlt::scene::{build_transport, generate_ensemble, parse_scene, RenderSettings};
use polarlt::tensor::{
    epipolar_masks, PixelGrid, ProbeLabel, ProbeMask, RectifiedGeometry, TransportTensor,
};
use polarlt::Error;
use serde::Serialize;

use crate::manifest::{beside, Recorder};
use crate::{
    ApplyArgs, Bits, CaptureArgs, Command, DecomposeArgs, DescatterAction, FitArgs, Format,
    LearnArgs, MaskArg, PcaArgs, ReconstructArgs, Sensor, SimulateArgs, SliceArgs, SynthArgs,
};

const DEFAULT_RESOLUTION: usize = 16;
const DEFAULT_BINS: usize = 128;
const DEFAULT_BIN_PS: f64 = 25.0;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
    /// A library error tied to a file.
    At(PathBuf, Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Core(e) | Failure::At(_, e) => {
                if e.is_numerical() {
                    3
                } else {
                    2
                }
            }
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
            Failure::At(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

type Outcome<T = ()> = Result<T, Failure>;

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Capture(a) => capture_cmd(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::LearnAngles(a) => learn_angles(a),
        Command::Decompose(a) => decompose(a),
        Command::Pca(a) => pca_cmd(a),
        Command::Descatter(a) => match a.action {
            DescatterAction::Synth(a) => descatter_synth(a),
            DescatterAction::Fit(a) => descatter_fit(a),
            DescatterAction::Apply(a) => descatter_apply(a),
        },
        Command::Slice(a) => slice(a),
    }
}

fn read_text(path: &Path) -> Outcome<String> {
    fs::read_to_string(path).map_err(|e| Failure::At(path.into(), e.into()))
}

fn read_tensor(path: &Path) -> Outcome<TransportTensor> {
    let f = File::open(path).map_err(|e| Failure::At(path.into(), e.into()))?;
    TransportTensor::read_from(BufReader::new(f)).map_err(|e| Failure::At(path.into(), e))
}

fn write_tensor(path: &Path, t: &TransportTensor) -> Outcome {
    let mut w = BufWriter::new(File::create(path)?);
    t.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

fn to_toml<T: Serialize>(value: &T) -> Outcome<String> {
    toml::to_string(value).map_err(|e| Failure::Core(Error::Format(e.to_string())))
}

fn ensure_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::At(dir.into(), e.into()))
}

fn simulate(a: SimulateArgs) -> Outcome {
    let text = read_text(&a.scene)?;
    let file =
        parse_scene(&text).map_err(|e| Failure::Usage(format!("{}: {e}", a.scene.display())))?;
    let render = file.render.unwrap_or(RenderSettings {
        width: None,
        height: None,
        bins: None,
        time_bin_ps: None,
    });
    let width = a.width.or(render.width).unwrap_or(DEFAULT_RESOLUTION);
    let height = a.height.or(render.height).unwrap_or(DEFAULT_RESOLUTION);
    let bins = a.bins.or(render.bins).unwrap_or(DEFAULT_BINS);
    let bin_ps = a
        .bin_width_ps
        .or(render.time_bin_ps)
        .unwrap_or(DEFAULT_BIN_PS);
    if !(bin_ps > 0.0 && bin_ps.is_finite()) {
        return Err(Failure::Usage(format!(
            "bin width must be > 0 ps, got {bin_ps}"
        )));
    }

    let config = format!("{text}\nwidth={width} height={height} bins={bins} bin_ps={bin_ps}");
    let mut rec = Recorder::new("simulate", &config, Some(a.seed));
    rec.input(&a.scene);
    let mut tensor = build_transport(
        &file.scene,
        PixelGrid::new(width, height),
        bins,
        bin_ps * 1e-12,
    )?;
    tensor.meta.provenance = format!("simulate {}", a.scene.display());
    write_tensor(&a.out, &tensor)?;
    rec.output(&a.out);
    rec.finish(&beside(&a.out))?;
    Ok(())
}

fn sensor_mode(s: Sensor) -> SensorMode {
    match s {
        Sensor::Intensity => SensorMode::Intensity,
        Sensor::PolarizerArray => SensorMode::PolarizerArray,
    }
}

fn capture_cmd(a: CaptureArgs) -> Outcome {
    let tensor = read_tensor(&a.tensor)?;
    let mut rec = Recorder::new("capture", &format!("{a:?}"), Some(a.seed));
    rec.input(&a.tensor);
    let schedule = if a.schedule == "drr" {
        drr_schedule(a.k, sensor_mode(a.sensor))?
    } else {
        let path = PathBuf::from(&a.schedule);
        rec.input(&path);
        AngleSchedule::from_toml(&read_text(&path)?).map_err(|e| Failure::At(path, e))?
    };
    let path = if tensor.is_coaxial() {
        OpticalPath::Coaxial { split: a.split }
    } else {
        OpticalPath::Spatial
    };
    let mask = match a.mask {
        None => None,
        Some(which) if tensor.is_coaxial() => {
            // Let the capture reject the pairing with its own message.
            let label = match which {
                MaskArg::Epipolar => ProbeLabel::Epipolar,
                MaskArg::NonEpipolar => ProbeLabel::NonEpipolar,
            };
            let mut m = ProbeMask::all_ones(tensor.camera_len(), tensor.logical_projector_len());
            m.label = label;
            Some(m)
        }
        Some(which) => {
            let (epi, non) = epipolar_masks(&RectifiedGeometry {
                camera: tensor.camera(),
                projector: tensor.projector(),
            })?;
            Some(match which {
                MaskArg::Epipolar => epi,
                MaskArg::NonEpipolar => non,
            })
        }
    };
    let meas = capture(&tensor, &schedule, &path, mask.as_ref(), a.noise, a.seed)?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    meas.write_to(&mut w)?;
    w.flush()?;
    rec.output(&a.out);
    rec.finish(&beside(&a.out))?;
    Ok(())
}

fn reconstruct_cmd(a: ReconstructArgs) -> Outcome {
    let f =
        File::open(&a.measurements).map_err(|e| Failure::At(a.measurements.clone(), e.into()))?;
    let meas = MeasurementSet::read_from(BufReader::new(f))
        .map_err(|e| Failure::At(a.measurements.clone(), e))?;
    let mut rec = Recorder::new("reconstruct", &format!("{a:?}"), Some(meas.seed));
    rec.input(&a.measurements);
    let r = reconstruct(&meas)?;
    if r.underdetermined {
        eprintln!(
            "warning: UNDERDETERMINED design (rank {} < 16); minimum-norm solutions written",
            r.rank
        );
    }
    write_tensor(&a.out, &r.tensor)?;
    rec.output(&a.out);
    let diag = a.diagnostics.unwrap_or_else(|| {
        let mut name = a.out.as_os_str().to_owned();
        name.push(".diagnostics.csv");
        PathBuf::from(name)
    });
    fs::write(&diag, r.diagnostics_csv())?;
    rec.output(&diag);
    rec.finish(&beside(&a.out))?;
    Ok(())
}

fn learn_angles(a: LearnArgs) -> Outcome {
    if a.eval_draws == 0 {
        return Err(Failure::Usage("--eval-draws must be at least 1".into()));
    }
    let config = TrainingConfig::from_toml(&read_text(&a.config)?)
        .map_err(|e| Failure::At(a.config.clone(), e))?;
    let mut rec = Recorder::new("learn-angles", "", Some(config.seed));
    rec.set_config_hash(config.hash()?);
    rec.input(&a.config);
    ensure_dir(&a.out)?;

    let learned = learn(&config)?;
    let mut write = |name: &str, text: String| -> Outcome {
        let p = a.out.join(name);
        fs::write(&p, text)?;
        rec.output(&p);
        Ok(())
    };
    write("schedule.toml", learned.schedule.to_toml()?)?;
    write("report.toml", learned.report_toml()?)?;
    write("loss_curve.csv", learned.loss_curve_csv())?;

    // Compare on an ensemble disjoint from training.
    let heldout = EnsembleSpec {
        seed: config.ensemble.seed.wrapping_add(1),
        ..config.ensemble.clone()
    }
    .samples()?;
    let mut candidates = vec![
        ("drr", drr_schedule(config.k, config.sensor_mode)?),
        ("learned", learned.schedule.clone()),
    ];
    if config.sensor_mode != SensorMode::Intensity {
        candidates.push(("drr", drr_schedule(config.k, SensorMode::Intensity)?));
    }
    if config.k != 36 || config.sensor_mode != SensorMode::Intensity {
        candidates.push(("drr", drr_schedule(36, SensorMode::Intensity)?));
    }
    let mut table = String::from(
        "schedule,captures,sensor_mode,rank,expected_loss,monte_carlo_mse,median_error\n",
    );
    println!(
        "{:<8} {:>8} {:<16} {:>4} {:>14} {:>14}",
        "schedule", "captures", "sensor", "rank", "expected_loss", "mc_mse"
    );
    for (name, schedule) in &candidates {
        let rank = design_matrix_with(schedule, &config.path)?.rank;
        let expected = expected_loss(schedule, &config.path, &heldout, config.noise_sigma)?;
        let stats = evaluate(
            schedule,
            &config.path,
            &heldout,
            config.noise_sigma,
            a.eval_draws,
            config.seed,
        )?;
        let mode = match schedule.sensor_mode {
            SensorMode::Intensity => "intensity",
            SensorMode::PolarizerArray => "polarizer_array",
        };
        table.push_str(&format!(
            "{name},{},{mode},{rank},{expected:e},{:e},{:e}\n",
            schedule.len(),
            stats.mse,
            stats.median
        ));
        println!(
            "{name:<8} {:>8} {mode:<16} {rank:>4} {expected:>14.6e} {:>14.6e}",
            schedule.len(),
            stats.mse
        );
    }
    write("comparison.csv", table)?;
    rec.finish(&a.out.join("manifest.toml"))?;
    Ok(())
}

fn check_index(what: &str, value: Option<usize>, len: usize) -> Outcome {
    match value {
        Some(v) if v >= len => Err(Failure::Usage(format!(
            "--{what} {v} is out of range (0..{len})"
        ))),
        _ => Ok(()),
    }
}

fn map_csv(values: &[Option<f64>], grid: PixelGrid) -> String {
    let mut out = String::new();
    for row in values.chunks(grid.width) {
        let cells: Vec<String> = row
            .iter()
            .map(|v| v.map_or_else(|| "nan".to_string(), |v| format!("{v:e}")))
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn decompose(a: DecomposeArgs) -> Outcome {
    let tensor = read_tensor(&a.tensor)?;
    check_index("bin", a.bin, tensor.bins())?;
    check_index("slot", a.slot, tensor.stored_projector_len())?;
    let mut rec = Recorder::new("decompose", &format!("{a:?}"), None);
    rec.input(&a.tensor);
    ensure_dir(&a.out)?;

    let camera = tensor.camera();
    let bins: Vec<usize> = a
        .bin
        .map_or_else(|| (0..tensor.bins()).collect(), |t| vec![t]);
    let slots: Vec<usize> = a
        .slot
        .map_or_else(|| (0..tensor.stored_projector_len()).collect(), |s| vec![s]);
    let mut reduced = TransportTensor::coaxial_zeros(camera, 1, tensor.meta.clone())?;
    for s in 0..camera.len() {
        let mut m = MuellerMatrix::zeros();
        for &slot in &slots {
            for &t in &bins {
                m = m + tensor.block_at_slot(s, slot, t);
            }
        }
        reduced.set_block(s, s, 0, &m)?;
    }
    let d = decompose_tensor(&reduced);
    for (name, which) in [
        ("polarizance", ScalarMap::Polarizance),
        ("retardance", ScalarMap::Retardance),
        ("diattenuation", ScalarMap::Diattenuation),
    ] {
        let p = a.out.join(format!("{name}.csv"));
        fs::write(&p, map_csv(&d.map(which, 0, 0), camera))?;
        rec.output(&p);
    }
    let flagged = |f: fn(&polarlt::decomposition::DecompositionFlags) -> bool| {
        d.entries.iter().flatten().filter(|r| f(&r.flags)).count()
    };
    #[derive(Serialize)]
    struct Summary {
        blocks: usize,
        null_count: usize,
        dark_floor: f64,
        singular_diattenuator: usize,
        negative_det_branch: usize,
    }
    let summary = Summary {
        blocks: d.entries.len(),
        null_count: d.null_count,
        dark_floor: d.floor,
        singular_diattenuator: flagged(|f| f.singular_diattenuator),
        negative_det_branch: flagged(|f| f.negative_det_branch),
    };
    let p = a.out.join("summary.toml");
    fs::write(&p, to_toml(&summary)?)?;
    rec.output(&p);
    rec.finish(&a.out.join("manifest.toml"))?;
    Ok(())
}

fn pca_cmd(a: PcaArgs) -> Outcome {
    let mut rec = Recorder::new("pca", &format!("{a:?}"), Some(a.seed));
    let samples: Vec<MuellerMatrix> = match (&a.tensor, a.ensemble) {
        (Some(path), _) => {
            let t = read_tensor(path)?;
            rec.input(path);
            let mut v = Vec::new();
            for s in 0..t.camera_len() {
                for slot in 0..t.stored_projector_len() {
                    for b in 0..t.bins() {
                        v.push(t.block_at_slot(s, slot, b));
                    }
                }
            }
            v
        }
        (None, Some(n)) => generate_ensemble(a.seed, n)?.samples,
        (None, None) => return Err(Failure::Usage("pca needs --tensor or --ensemble".into())),
    };
    ensure_dir(&a.out)?;
    let obs = build_observation(&samples, a.scale)?;
    let basis = pca(&obs)?;
    let p = a.out.join("components.csv");
    fs::write(&p, basis.to_csv())?;
    rec.output(&p);

    let mut energy = String::from("components,energy\n");
    for (i, e) in basis.energy_curve().iter().enumerate() {
        energy.push_str(&format!("{},{e:e}\n", i + 1));
    }
    let p = a.out.join("energy.csv");
    fs::write(&p, energy)?;
    rec.output(&p);

    #[derive(Serialize)]
    struct Summary {
        rows: usize,
        skipped: usize,
        scale: f64,
        components_95: usize,
        components_99: usize,
    }
    let summary = Summary {
        rows: obs.rows(),
        skipped: obs.skipped,
        scale: a.scale,
        components_95: basis.components_for_energy(0.95),
        components_99: basis.components_for_energy(0.99),
    };
    let p = a.out.join("summary.toml");
    fs::write(&p, to_toml(&summary)?)?;
    rec.output(&p);
    rec.finish(&a.out.join("manifest.toml"))?;
    Ok(())
}

fn grid_image(label: &str, grid: PixelGrid, values: Vec<f64>) -> SliceImage {
    SliceImage {
        label: label.into(),
        width: grid.width,
        height: grid.height,
        values,
    }
}

fn descatter_synth(a: SynthArgs) -> Outcome {
    let grid = PixelGrid::new(a.width, a.height);
    let mut rec = Recorder::new("descatter synth", &format!("{a:?}"), Some(a.seed));
    let demo = synthetic_composite(grid, a.bins, a.noise, a.seed)?;
    ensure_dir(&a.out)?;
    for (name, t) in [
        ("composite.pltt", &demo.composite),
        ("object.pltt", &demo.object),
    ] {
        let p = a.out.join(name);
        write_tensor(&p, t)?;
        rec.output(&p);
    }
    let p = a.out.join("ground_truth.csv");
    write_csv(&p, &grid_image("ground_truth", grid, demo.ground_truth))?;
    rec.output(&p);
    rec.finish(&a.out.join("manifest.toml"))?;
    Ok(())
}

fn read_grid_csv(path: &Path) -> Outcome<Vec<f64>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        for cell in line.split(',') {
            let v = cell.trim().parse::<f64>().map_err(|_| {
                Failure::Usage(format!(
                    "{}: line {}: `{}` is not a number",
                    path.display(),
                    i + 1,
                    cell.trim()
                ))
            })?;
            out.push(v);
        }
    }
    Ok(out)
}

fn load_images(paths: &[PathBuf], rec: &mut Recorder) -> Outcome<Vec<PolarimetricImage>> {
    paths
        .iter()
        .map(|p| {
            rec.input(p);
            epipolar_image(&read_tensor(p)?).map_err(|e| Failure::At(p.clone(), e))
        })
        .collect()
}

fn descatter_fit(a: FitArgs) -> Outcome {
    if a.composite.len() != a.ground_truth.len() {
        return Err(Failure::Usage(format!(
            "{} composites but {} ground-truth inputs",
            a.composite.len(),
            a.ground_truth.len()
        )));
    }
    let mut rec = Recorder::new("descatter fit", &format!("{a:?}"), None);
    let images = load_images(&a.composite, &mut rec)?;
    let mut truth = Vec::new();
    for (p, img) in a.ground_truth.iter().zip(&images) {
        rec.input(p);
        let gt = if p.extension().is_some_and(|e| e == "pltt") {
            epipolar_image(&read_tensor(p)?)?.intensity()
        } else {
            read_grid_csv(p)?
        };
        if gt.len() != img.grid.len() {
            return Err(Failure::Usage(format!(
                "{}: {} values for a {}x{} image",
                p.display(),
                gt.len(),
                img.grid.width,
                img.grid.height
            )));
        }
        truth.push(gt);
    }
    let opts = DescatterOptions {
        features: if a.intensity_only {
            FeatureSet::IntensityOnly
        } else {
            FeatureSet::Full
        },
        max_iterations: a.max_iterations,
        ..DescatterOptions::default()
    };
    let model = fit_descatter(&images, &truth, &opts)?;
    fs::write(&a.out, model.to_toml()?)?;
    rec.output(&a.out);
    for (c, (img, gt)) in model.channels.iter().zip(images.iter().zip(&truth)) {
        let gain = psnr(&c.synthesize(img), gt)? - psnr(&img.intensity(), gt)?;
        println!(
            "channel {:<8} objective {:.6e}  closed-form gap {:.3e}  stop {:?}  psnr gain {:.2} dB",
            c.channel_id,
            c.objective(),
            c.closed_form_gap,
            c.stop,
            gain
        );
    }
    rec.finish(&beside(&a.out))?;
    Ok(())
}

fn descatter_apply(a: ApplyArgs) -> Outcome {
    let mut rec = Recorder::new("descatter apply", &format!("{a:?}"), None);
    rec.input(&a.model);
    let model = DescatterModel::from_toml(&read_text(&a.model)?)
        .map_err(|e| Failure::At(a.model.clone(), e))?;
    let images = load_images(&a.composite, &mut rec)?;
    let outputs = apply_descatter(&model, &images)?;
    ensure_dir(&a.out)?;
    for (k, (img, values)) in images.iter().zip(outputs).enumerate() {
        let image = grid_image(&img.channel_id, img.grid, values);
        let csv = a.out.join(format!("descattered_{k}.csv"));
        write_csv(&csv, &image)?;
        rec.output(&csv);
        let pgm = a.out.join(format!("descattered_{k}.pgm"));
        write_pgm(&pgm, &image, BitDepth::Sixteen)?;
        rec.output(&pgm);
    }
    rec.finish(&a.out.join("manifest.toml"))?;
    Ok(())
}

fn slice(a: SliceArgs) -> Outcome {
    let expr: SliceExpr = a
        .expr
        .parse()
        .map_err(|e| Failure::Usage(format!("invalid slice expression `{}`: {e}", a.expr)))?;
    let tensor = read_tensor(&a.tensor)?;
    let mut rec = Recorder::new("slice", &format!("{a:?}"), None);
    rec.input(&a.tensor);
    let images = evaluate_slice(&expr, &tensor)?;
    ensure_dir(&a.out)?;
    let depth = match a.bits {
        Bits::Eight => BitDepth::Eight,
        Bits::Sixteen => BitDepth::Sixteen,
    };
    let mut index = String::from("file,label,width,height\n");
    for (i, img) in images.iter().enumerate() {
        let stem = format!("slice_{i:03}");
        if matches!(a.format, Format::Pgm | Format::Both) {
            let p = a.out.join(format!("{stem}.pgm"));
            write_pgm(&p, img, depth)?;
            rec.output(&p);
        }
        if matches!(a.format, Format::Csv | Format::Both) {
            let p = a.out.join(format!("{stem}.csv"));
            write_csv(&p, img)?;
            rec.output(&p);
        }
        index.push_str(&format!(
            "{stem},\"{}\",{},{}\n",
            img.label, img.width, img.height
        ));
    }
    let p = a.out.join("index.csv");
    fs::write(&p, index)?;
    rec.output(&p);
    rec.finish(&a.out.join("manifest.toml"))?;
    Ok(())
}
