use std::cell::RefCell;
use std::path::{Path, PathBuf};

use facewarp_core::color::adjust;
use facewarp_core::composite::{blend, build_mask, BlendProblem, Mask};
use facewarp_core::mmfit::{
    blend_vertex_colors, camera_normals_z, correspond_by_voting, fit_shape, fit_texture_coeffs, framing_pose,
    jittered_cameras, ndc_to_pixel, pixel_to_ndc, project_vertices, sample_vertex_colors, vertex_confidence,
    CameraParams,
};
use facewarp_core::morph::{average_identity, generate_augmented, FaceDataset, FaceSample, MorphSpec};
use facewarp_core::warp::{build_flow, decompose_to_texture, render_from_texture};
use facewarp_core::{Error, Image, LandmarkSet, MeanGeometry, Point2};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::*;
use crate::config::Config;
use crate::error::{CliError, Result};
use crate::formats::landmarks::LandmarkFile;
use crate::formats::{flow, mmb, png, write_bytes};

pub fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Warp(a) => warp(&a),
        Command::Augment(a) => augment(&a, &cfg),
        Command::Adjust(a) => adjust_photo(&a),
        Command::Fit3d(a) => fit3d(&a, &cfg),
        Command::Average(a) => average(&a),
        Command::Composite(a) => composite(&a, &cfg),
        Command::Flow(a) => write_flow(&a),
        Command::Correspond(a) => correspond(&a, &cfg),
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn mean_geometry(mean: &LandmarkFile) -> Result<MeanGeometry> {
    Ok(MeanGeometry::new(mean.landmarks()?, mean.width, mean.height)?)
}

fn check_count(what: &str, want: usize, got: usize) -> Result<()> {
    if want != got {
        return Err(CliError::Contract(format!(
            "{what}: expected {want} landmarks, found {got}"
        )));
    }
    Ok(())
}

fn warp(a: &WarpArgs) -> Result<()> {
    let img = png::read(&a.image)?;
    let face = LandmarkFile::read(&a.landmarks)?;
    let mean = LandmarkFile::read(&a.mean)?;
    check_count("face landmarks", mean.points.len(), face.points.len())?;
    let geom = mean_geometry(&mean)?;
    let out = match a.direction {
        Direction::ToMean => {
            face.check_frame("face", img.width(), img.height())?;
            decompose_to_texture(&img, &face.landmarks()?, &geom)?
        }
        Direction::FromMean => {
            mean.check_frame("mean", img.width(), img.height())?;
            face.check_frame("face", img.width(), img.height())?;
            render_from_texture(&img, &face.landmarks()?, &geom)?
        }
    };
    png::write(&a.out, &out, a.bit_depth)
}

/// `NAME.png` + `NAME.json` pairs, sorted by name.
fn dataset_entries(dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let mut entries = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let json = path.with_extension("json");
            if !json.is_file() {
                return Err(CliError::parse(&json, "missing landmark file for dataset image"));
            }
            entries.push((name, path, json));
        }
    }
    entries.sort();
    Ok(entries)
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    index: usize,
    image: String,
    landmarks: String,
    seed_id: &'a str,
    neighbor_id: &'a str,
    #[serde(flatten)]
    spec: MorphSpec,
}

fn augment(a: &AugmentArgs, cfg: &Config) -> Result<()> {
    let mut config = cfg.augment;
    if let Some(k) = a.k {
        config.neighbors = k;
    }
    if let Some(l) = a.lambda {
        config.lambda = l;
    }
    if let Some(m) = a.weight_mode {
        config.weight_mode = m.into();
    }

    let entries = dataset_entries(&a.dataset)?;
    let faces: Vec<(String, Image, LandmarkFile)> = entries
        .par_iter()
        .map(|(name, png_path, json)| Ok((name.clone(), png::read(png_path)?, LandmarkFile::read(json)?)))
        .collect::<Result<_>>()?;
    let Some((_, first, first_lm)) = faces.first() else {
        return Err(CliError::Contract(format!("no PNG images in {}", a.dataset.display())));
    };
    let (w, h) = (first.width(), first.height());
    for (name, img, lm) in &faces {
        if img.dims() != first.dims() {
            return Err(CliError::Contract(format!(
                "{name}: image is {}x{}x{}, expected {w}x{h}x{}",
                img.width(),
                img.height(),
                img.channels(),
                first.channels()
            )));
        }
        lm.check_frame(name, w, h)?;
        check_count(name, first_lm.points.len(), lm.points.len())?;
    }
    let sets: Vec<LandmarkSet> = faces.iter().map(|(_, _, lm)| lm.landmarks()).collect::<Result<_>>()?;
    let geom = MeanGeometry::new(LandmarkSet::mean_of(&sets)?, w, h)?;
    let samples: Vec<FaceSample> = faces
        .par_iter()
        .zip(&sets)
        .map(|((name, img, _), set)| {
            Ok(FaceSample::new(
                name.clone(),
                set.clone(),
                decompose_to_texture(img, set, &geom)?,
            ))
        })
        .collect::<Result<_>>()?;
    let dataset = FaceDataset::new(samples)?;
    info!("dataset: {} faces of {w}x{h}", dataset.len());

    let morphs = generate_augmented(&dataset, a.count, &config, a.seed)?;
    let rendered: Vec<Image> = morphs
        .par_iter()
        .map(|m| m.render(dataset.mean()))
        .collect::<Result<_, Error>>()?;

    create_dir(&a.out)?;
    let mut manifest = String::new();
    for (m, img) in morphs.iter().zip(&rendered) {
        let image = format!("{}.png", m.sample.id);
        let landmarks = format!("{}.json", m.sample.id);
        png::write(&a.out.join(&image), img, a.bit_depth)?;
        LandmarkFile::new(w, h, &m.sample.landmarks).write(&a.out.join(&landmarks))?;
        let samples = dataset.samples();
        let entry = ManifestEntry {
            index: manifest.lines().count(),
            image,
            landmarks,
            seed_id: &samples[m.spec.seed_index].id,
            neighbor_id: &samples[m.spec.neighbor_index].id,
            spec: m.spec,
        };
        manifest.push_str(&serde_json::to_string(&entry).expect("manifest entry serializes"));
        manifest.push('\n');
    }
    write_bytes(&a.out.join("manifest.jsonl"), manifest.as_bytes())
}

const CHANNEL_NAMES: [&str; 3] = ["Y", "Cr", "Cb"];

fn adjust_photo(a: &AdjustArgs) -> Result<()> {
    let photo = png::read(&a.photo)?;
    let normalized = png::read(&a.normalized)?;
    let adj = adjust(&photo, &normalized)?;
    for &c in &adj.degenerate_channels {
        warn!(
            "{}: {} mean {:.6} is at the edge of its range; channel left unchanged",
            a.photo.display(),
            CHANNEL_NAMES[c],
            adj.photo_mean.0[c]
        );
    }
    png::write(&a.out, &adj.image, a.bit_depth)
}

#[derive(Serialize)]
struct TextureOutput {
    z: Vec<f64>,
    /// Blended vertex colors, vertex-major.
    vertex_colors: Vec<f64>,
    confidence: Vec<f64>,
}

#[derive(Serialize)]
struct FitOutput {
    s: Vec<f64>,
    camera: CameraParams,
    loss: f64,
    iterations: usize,
    converged: bool,
    /// Root-mean-square landmark reprojection error in pixels.
    rms_error_px: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    texture: Option<TextureOutput>,
}

fn camera_for(cfg: &Config, width: usize, height: usize) -> CameraParams {
    CameraParams {
        fov_degrees: cfg.camera.fov_degrees,
        near: cfg.camera.near,
        far: cfg.camera.far,
        aspect: width as f64 / height as f64,
        ..CameraParams::default()
    }
}

fn fit3d(a: &Fit3dArgs, cfg: &Config) -> Result<()> {
    let lm = LandmarkFile::read(&a.landmarks)?;
    let model = mmb::read(&a.model)?;
    check_count("fit landmarks", model.landmark_vertices().len(), lm.points.len())?;
    let mut opts = cfg.fit;
    if let Some(l) = a.lambda {
        opts.lambda = l;
    }
    if let Some(d) = a.descent {
        opts.descent = d.into();
    }
    if let Some(n) = a.max_iterations {
        opts.max_iterations = n;
    }
    let (w, h) = (lm.width, lm.height);
    let cam = camera_for(cfg, w, h);
    let pixels = lm.landmarks()?;
    let targets: Vec<Point2> = pixels.iter().map(|&p| pixel_to_ndc(p, w, h)).collect();
    let fit = fit_shape(&model, &targets, &cam, &opts)?;
    if !fit.converged {
        warn!(
            "shape fit stopped after {} iterations without meeting the gradient tolerance",
            fit.iterations
        );
    }
    let fitted = fit.camera(&cam);

    let projected: Vec<Point2> = project_vertices(&model, &fit.s, &fitted)?
        .into_iter()
        .map(|p| ndc_to_pixel(p, w, h))
        .collect();
    let sq: f64 = model
        .landmark_vertices()
        .iter()
        .zip(pixels.iter())
        .map(|(&i, t)| (projected[i] - *t).norm_squared())
        .sum();
    let rms_error_px = (sq / pixels.len() as f64).sqrt();

    let texture = match &a.image {
        None => None,
        Some(path) => {
            let img = png::read(path)?;
            lm.check_frame("fit", img.width(), img.height())?;
            let mut tcfg = cfg.texture.clone();
            if let Some(c) = a.confidence {
                tcfg.confidence = c.into();
            }
            let mask = build_mask(&pixels, w, h, tcfg.mask_blur_sigma)?;
            let nz = camera_normals_z(&model, &fit.s, &fitted)?;
            let alpha = vertex_confidence(&mask, &projected, &nz, tcfg.confidence)?;
            let cp = sample_vertex_colors(&img, &projected)?;
            let tf = fit_texture_coeffs(&model, &cp, &alpha, tcfg.ridge)?;
            let vertex_colors = blend_vertex_colors(&cp, &tf.colors, &alpha)?;
            Some(TextureOutput {
                z: tf.z,
                vertex_colors,
                confidence: alpha.values().to_vec(),
            })
        }
    };

    write_json(
        &a.out,
        &FitOutput {
            s: fit.s,
            camera: fitted,
            loss: fit.loss,
            iterations: fit.iterations,
            converged: fit.converged,
            rms_error_px,
            texture,
        },
    )
}

fn average(a: &AverageArgs) -> Result<()> {
    if a.images.len() != a.landmarks.len() {
        return Err(CliError::Contract(format!(
            "{} images but {} landmark files",
            a.images.len(),
            a.landmarks.len()
        )));
    }
    let images: Vec<Image> = a.images.iter().map(|p| png::read(p)).collect::<Result<_>>()?;
    let mut sets = Vec::with_capacity(images.len());
    for (img, path) in images.iter().zip(&a.landmarks) {
        let lm = LandmarkFile::read(path)?;
        lm.check_frame(&path.display().to_string(), img.width(), img.height())?;
        sets.push(lm.landmarks()?);
    }
    let avg = average_identity(&images, &sets)?;
    if let Some(path) = &a.landmarks_out {
        LandmarkFile::new(avg.texture.width(), avg.texture.height(), &avg.landmarks).write(path)?;
    }
    png::write(&a.out, &avg.texture, a.bit_depth)
}

fn composite(a: &CompositeArgs, cfg: &Config) -> Result<()> {
    let fg = png::read(&a.foreground)?;
    let bg = png::read(&a.background)?;
    let (w, h) = (fg.width(), fg.height());
    let mask = if let Some(path) = &a.mask {
        let m = png::read(path)?;
        if m.channels() > 2 {
            return Err(CliError::Contract(format!(
                "{}: mask must be grayscale",
                path.display()
            )));
        }
        Mask::new(m.channel(0))?
    } else {
        let path = a.landmarks.as_ref().expect("clap requires --mask or --landmarks");
        let lm = LandmarkFile::read(path)?;
        lm.check_frame("mask", w, h)?;
        build_mask(&lm.landmarks()?, w, h, a.blur_sigma.unwrap_or(cfg.composite.blur_sigma))?
    };
    let problem = BlendProblem {
        gradient_weight: cfg.composite.gradient_weight,
        color_weight: cfg.composite.color_weight,
        anchor_weight: cfg.composite.anchor_weight,
        ..BlendProblem::new(fg, bg, mask)
    };
    png::write(&a.out, &blend(&problem)?, a.bit_depth)
}

fn write_flow(a: &FlowArgs) -> Result<()> {
    let face = LandmarkFile::read(&a.landmarks)?;
    let mean = LandmarkFile::read(&a.mean)?;
    check_count("face landmarks", mean.points.len(), face.points.len())?;
    let (l, m) = (face.landmarks()?, mean.landmarks()?);
    let field = match a.direction {
        Direction::ToMean => {
            let geom = mean_geometry(&mean)?;
            build_flow(geom.landmarks(), &l.displacement_from(&m)?, geom.width(), geom.height())?
        }
        Direction::FromMean => build_flow(&l, &m.displacement_from(&l)?, face.width, face.height)?,
    };
    flow::write(&a.out, &field)
}

#[derive(Serialize)]
struct JitterCamera {
    index: usize,
    detections: String,
    camera: CameraParams,
    /// Row-major OpenGL matrices.
    modelview: [[f64; 4]; 4],
    projection: [[f64; 4]; 4],
}

#[derive(Serialize)]
struct CorrespondOutput {
    landmark_vertices: Vec<usize>,
}

fn detection_file(index: usize) -> String {
    format!("jitter-{index:03}.json")
}

fn correspond(a: &CorrespondArgs, cfg: &Config) -> Result<()> {
    let model = mmb::read(&a.model)?;
    let mut opts = cfg.voting;
    if let Some(n) = a.jitter_count {
        opts.jitter_count = n;
    }
    if let Some(d) = a.jitter_degrees {
        opts.jitter_degrees = d;
    }
    let pose = framing_pose(&model, &camera_for(cfg, a.width, a.height))?;

    if let Some(path) = &a.emit_cameras {
        let cams: Vec<JitterCamera> = jittered_cameras(&pose, &opts, a.seed)
            .into_iter()
            .enumerate()
            .map(|(index, camera)| JitterCamera {
                index,
                detections: detection_file(index),
                modelview: camera.modelview_matrix(),
                projection: camera.projection_matrix(),
                camera,
            })
            .collect();
        return write_json(path, &cams);
    }

    let dir = a
        .detections
        .as_ref()
        .expect("clap requires --detections or --emit-cameras");
    // The detector trait reports core errors; keep the richer file error aside.
    let failure: RefCell<Option<CliError>> = RefCell::new(None);
    let detector = |index: usize, _cam: &CameraParams| -> facewarp_core::Result<Vec<Point2>> {
        let path = dir.join(detection_file(index));
        let read = LandmarkFile::read(&path).and_then(|lm| {
            lm.check_frame(&path.display().to_string(), a.width, a.height)?;
            lm.landmarks()
        });
        match read {
            Ok(set) => Ok(set.iter().map(|&p| pixel_to_ndc(p, a.width, a.height)).collect()),
            Err(e) => {
                let msg = e.to_string();
                *failure.borrow_mut() = Some(e);
                Err(Error::Detector(msg))
            }
        }
    };
    let indices = match correspond_by_voting(&model, &pose, &detector, &opts, a.seed) {
        Ok(v) => v,
        Err(e) => return Err(failure.into_inner().unwrap_or(e.into())),
    };
    if let Some(path) = &a.model_out {
        mmb::write(path, &model.clone().with_landmark_vertices(indices.clone())?)?;
    }
    let out = a.out.as_ref().expect("clap requires --out with --detections");
    write_json(
        out,
        &CorrespondOutput {
            landmark_vertices: indices,
        },
    )
}
