use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use synthkit_core::spectral::{hf_energy, mean_profile, radial_profile, standardize, RadialProfile, DEFAULT_BINS};
use synthkit_core::Image;

use super::{fmt, write_csv, write_json};
use crate::{CliError, CliResult, RunContext, Status};

const EXTENSIONS: [&str; 5] = ["png", "ppm", "pgm", "pbm", "pnm"];

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SpectraArgs {
    /// Directory of PNG/PNM images; repeat for several sets. The set is named after the directory.
    #[arg(long = "set", required = true)]
    pub sets: Vec<PathBuf>,
    /// Radial bins over normalized frequency [0, 1].
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct SetSummary {
    images: usize,
    mean_hf_energy: f64,
    min_hf_energy: f64,
    max_hf_energy: f64,
}

fn image_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let ext = path.extension().map(|x| x.to_string_lossy().to_lowercase());
        if ext.is_some_and(|x| EXTENSIONS.contains(&x.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::invalid(format!("no PNG/PNM images in {}", dir.display())));
    }
    Ok(files)
}

pub(crate) fn load_image(path: &Path) -> CliResult<Image> {
    let decoded = image::ImageReader::open(path)
        .map_err(|e| CliError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| CliError::io(path, e))?
        .decode()
        .map_err(|e| match e {
            image::ImageError::IoError(io) => CliError::io(path, io),
            other => CliError::invalid(format!("{}: {other}", path.display())),
        })?;
    let rgb = decoded.to_rgb32f();
    let (w, h) = rgb.dimensions();
    let values = rgb.into_raw().into_iter().map(f64::from).collect();
    Ok(Image::new(h as usize, w as usize, 3, values)?)
}

/// Profile and high-frequency energy of one standardized image.
fn analyze(path: &Path, bins: usize) -> CliResult<(RadialProfile, f64)> {
    let img = standardize(&load_image(path)?);
    Ok((radial_profile(&img, bins)?, hf_energy(&img)))
}

pub fn run(a: &SpectraArgs, ctx: &mut RunContext) -> CliResult<Status> {
    if a.bins < 2 {
        return Err(CliError::invalid(format!("need at least 2 bins, got {}", a.bins)));
    }
    let mut names = Vec::new();
    let mut per_set = Vec::new();
    for dir in &a.sets {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if names.contains(&name) {
            return Err(CliError::invalid(format!("two sets are named {name:?}")));
        }
        let files = image_files(dir)?;
        files.iter().for_each(|f| ctx.input(f));
        // Collected in file order, so the set means do not depend on --threads.
        let results: Vec<_> = files.par_iter().map(|f| analyze(f, a.bins)).collect::<CliResult<_>>()?;
        names.push(name);
        per_set.push((files, results));
    }

    let mut profile_rows = Vec::new();
    let mut energy_rows = Vec::new();
    let mut summary = BTreeMap::new();
    for (name, (files, results)) in names.iter().zip(&per_set) {
        let profiles: Vec<RadialProfile> = results.iter().map(|r| r.0.clone()).collect();
        let mean = mean_profile(&profiles)?;
        for (i, (r, m)) in mean.radius.iter().zip(&mean.magnitude).enumerate() {
            profile_rows.push(vec![name.clone(), i.to_string(), fmt(*r), fmt(*m)]);
        }
        let energies: Vec<f64> = results.iter().map(|r| r.1).collect();
        for (f, e) in files.iter().zip(&energies) {
            let file = f.file_name().unwrap_or_default().to_string_lossy().into_owned();
            energy_rows.push(vec![name.clone(), file, fmt(*e)]);
        }
        let s = SetSummary {
            images: energies.len(),
            mean_hf_energy: energies.iter().sum::<f64>() / energies.len() as f64,
            min_hf_energy: energies.iter().copied().fold(f64::INFINITY, f64::min),
            max_hf_energy: energies.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        println!("{name}: {} images, mean high-frequency energy {:.6}", s.images, s.mean_hf_energy);
        summary.insert(name.clone(), s);
    }
    if let Some(p) = ctx.output("profiles.csv") {
        write_csv(&p, &["set", "bin", "radius", "magnitude"], profile_rows)?;
    }
    if let Some(p) = ctx.output("energy.csv") {
        write_csv(&p, &["set", "file", "hf_energy"], energy_rows)?;
    }
    if let Some(p) = ctx.output("summary.json") {
        write_json(&p, &summary)?;
    }
    Ok(Status::Ok)
}
