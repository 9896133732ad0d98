use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use gewdiff_core::conditioning::{
    build_conditions, fallback_segment, mask_from_segments, ndvi, upsample_labels, upsample_plane,
    ConditionSet, MaskMap,
};
use gewdiff_core::container::{load_codec, load_rwa, save_codec, save_rwa};
use gewdiff_core::cube::Plane;
use gewdiff_core::losses::{total_loss, LossWeights, PoolPyramid};
use gewdiff_core::metrics::{self, MetricOptions};
use gewdiff_core::pipeline::{self, DenoiserSpec, PipelineConfig};
use gewdiff_core::raster::{load_cube, load_segmentation, save_cube, save_segmentation};
use gewdiff_core::sampler;
use gewdiff_core::schedule::{extract_edges, EdgeMap};
use gewdiff_core::synthetic::{downsample, generate_scene, SceneConfig};
use gewdiff_core::wavelet::{rwa_decode, rwa_encode};
use gewdiff_core::{Error, LatentCodec, Result, SegmentationMap};

use crate::args::{Command, DenoiserArgs, DenoiserKind, Params};

const CODEC_FILE: &str = "codec.gwc";
const MASK_FILE: &str = "mask.bsq";
const EDGE_FILE: &str = "edges.bsq";

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| io_err(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| io_err(Path::new("<stdout>"), e)),
    }
}

fn resolve(params: &Params, denoiser: Option<&DenoiserArgs>) -> Result<PipelineConfig> {
    let mut c = match &params.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    macro_rules! apply {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = params.$flag { c.$field = v; })*
        };
    }
    apply!(
        rwa_levels => rwa_levels, pca_k => pca_k, factor => sr_factor,
        sigma_max => sigma_max, sigma_min => sigma_min, rho => rho, steps => steps,
        eta => eta, red_band => red_band, nir_band => nir_band,
        edge_percentile => edge_percentile, edge_dilate => edge_dilate,
        segment_grid => segment_grid, seed => seed
    );
    if let Some(d) = denoiser {
        match (d.denoiser, &d.denoiser_file) {
            (Some(DenoiserKind::Gaussian), _) => c.denoiser = DenoiserSpec::Gaussian,
            (Some(DenoiserKind::Zero), _) => c.denoiser = DenoiserSpec::Zero,
            (Some(DenoiserKind::LinearFile), Some(f)) => {
                c.denoiser = DenoiserSpec::LinearFile(f.clone())
            }
            (Some(DenoiserKind::LinearFile), None) => {
                return Err(Error::Invalid(
                    "--denoiser linear-file needs --denoiser-file".into(),
                ))
            }
            (None, Some(f)) => c.denoiser = DenoiserSpec::LinearFile(f.clone()),
            (None, None) => {}
        }
    }
    c.validate()?;
    Ok(c)
}

fn load_segments(path: Option<&PathBuf>) -> Result<Option<SegmentationMap>> {
    path.map(load_segmentation).transpose()
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenSynthetic {
            height,
            width,
            bands,
            seed,
            segments,
            noise_std,
            out,
            segments_out,
            lr_out,
            lr_factor,
        } => {
            let scene = generate_scene(&SceneConfig {
                height,
                width,
                bands,
                seed,
                segments,
                noise_std,
                ..Default::default()
            })?;
            save_cube(&scene.cube, &out)?;
            if let Some(p) = segments_out {
                save_segmentation(&scene.segmentation, p)?;
            }
            if let Some(p) = lr_out {
                save_cube(&downsample(&scene.cube, lr_factor)?, p)?;
            }
            Ok(())
        }
        Command::Encode { input, out, params } => {
            let c = resolve(&params, None)?;
            let (latent, codec) = LatentCodec::fit(&load_cube(input)?, c.rwa_levels, c.pca_k)?;
            save_codec(&codec, Some(&latent), out)
        }
        Command::Decode { input, latent, out } => {
            let (codec, stored) = load_codec(&input)?;
            let z = match latent {
                Some(p) => load_cube(p)?,
                None => stored.ok_or_else(|| {
                    Error::Invalid(format!(
                        "{} holds no latent; pass --latent",
                        input.display()
                    ))
                })?,
            };
            save_cube(&codec.reconstruct(&z)?, out)
        }
        Command::RwaEncode {
            input,
            levels,
            lossless,
            out,
        } => save_rwa(&rwa_encode(&load_cube(input)?, levels, lossless)?, out),
        Command::RwaDecode {
            input,
            zero_residuals,
            out,
        } => save_cube(&rwa_decode(&load_rwa(input)?, zero_residuals)?, out),
        Command::RoundtripEval {
            input,
            zero_residuals,
            out,
            params,
        } => {
            let mut c = resolve(&params, None)?;
            c.keep_residuals = !zero_residuals;
            let report = pipeline::run_encode_decode_eval(&load_cube(input)?, &c)?;
            note_fid();
            emit(&report.to_csv(), out.as_deref())
        }
        Command::Sweep {
            input,
            levels,
            ks,
            zero_residuals,
            out,
            params,
        } => {
            let mut c = resolve(&params, None)?;
            c.keep_residuals = !zero_residuals;
            let rows = pipeline::sweep(&load_cube(input)?, &levels, &ks, &c)?;
            note_fid();
            emit(&pipeline::sweep_csv(&rows), out.as_deref())
        }
        Command::Mask {
            input,
            segments,
            out,
            params,
        } => {
            let c = resolve(&params, None)?;
            let lr = load_cube(input)?;
            let mask = mask_at_target(&lr, load_segments(segments.as_ref())?.as_ref(), &c)?;
            save_cube(&mask.to_plane().into_cube()?, out)
        }
        Command::Edge {
            input,
            percentile,
            dilate,
            out,
        } => {
            let edges = extract_edges(&load_cube(input)?, percentile, dilate)?;
            save_edges(&edges, &out)
        }
        Command::Schedule { out, params } => {
            let c = resolve(&params, None)?;
            emit(&pipeline::run_schedule_report(&c)?, out.as_deref())
        }
        Command::Conditions {
            input,
            segments,
            out,
            params,
        } => {
            let c = resolve(&params, None)?;
            let lr = load_cube(input)?;
            let (_, codec) = LatentCodec::fit(&lr, c.rwa_levels, c.pca_k)?;
            let segs = load_segments(segments.as_ref())?;
            let conds = build_conditions(&lr, segs.as_ref(), &codec, &c.condition_options())?;
            save_conditions(&out, &codec, &conds)
        }
        Command::Sample {
            conditions,
            out,
            denoiser,
            params,
        } => {
            let c = resolve(&params, Some(&denoiser))?;
            let (codec, conds) = load_conditions(&conditions)?;
            let d = c.denoiser.build(&conds)?;
            let shape = (conds.height(), conds.width(), codec.latent_channels());
            let z = sampler::sample(d.as_ref(), &conds, &c.sampler_config()?, shape)?;
            save_codec(&codec, Some(&z), out)
        }
        Command::Sr {
            input,
            segments,
            out,
            latent_out,
            denoiser,
            params,
        } => {
            let c = resolve(&params, Some(&denoiser))?;
            let segs = load_segments(segments.as_ref())?;
            let result =
                pipeline::run_super_resolution(&load_cube(input)?, segs.as_ref(), &c, None)?;
            save_cube(&result.hr, out)?;
            if let Some(p) = latent_out {
                save_codec(&result.codec, Some(&result.latent), p)?;
            }
            Ok(())
        }
        Command::Metrics {
            pred,
            target,
            data_range,
            scale_ratio,
            out,
        } => {
            let opts = MetricOptions {
                data_range,
                scale_ratio,
            };
            let report = metrics::report(&load_cube(pred)?, &load_cube(target)?, &opts)?;
            note_fid();
            emit(&report.to_csv(), out.as_deref())
        }
        Command::Loss {
            pred,
            target,
            sigma,
            weights,
            sigma_data,
            out,
        } => {
            let [pixel, perceptual, gradient] = weights[..] else {
                return Err(Error::Invalid(format!(
                    "--weights takes three values, got {}",
                    weights.len()
                )));
            };
            let w = LossWeights {
                pixel,
                perceptual,
                gradient,
                sigma_data,
            };
            let b = total_loss(
                &load_cube(pred)?,
                &load_cube(target)?,
                &PoolPyramid::default(),
                &w,
                sigma,
            )?;
            emit(&b.to_csv(), out.as_deref())
        }
    }
}

fn note_fid() {
    eprintln!("note: FID is not reported (it needs a pretrained embedding network)");
}

/// NDVI at LR, upsampled to the target size, averaged over segments.
fn mask_at_target(
    lr: &gewdiff_core::HsiCube,
    segs: Option<&SegmentationMap>,
    c: &PipelineConfig,
) -> Result<MaskMap> {
    let f = c.sr_factor;
    let nd = upsample_plane(&ndvi(lr, c.red_band, c.nir_band)?, f)?;
    let segs = match segs {
        Some(s) if s.height == nd.height && s.width == nd.width => s.clone(),
        Some(s) if s.height == lr.height() && s.width == lr.width() => upsample_labels(s, f)?,
        Some(s) => {
            return Err(Error::Shape(format!(
                "segmentation is {}x{}, expected {}x{} or {}x{}",
                s.height,
                s.width,
                lr.height(),
                lr.width(),
                nd.height,
                nd.width
            )))
        }
        None => fallback_segment(&nd, c.segment_grid)?,
    };
    mask_from_segments(&nd, &segs)
}

fn save_edges(edges: &EdgeMap, path: &Path) -> Result<()> {
    save_segmentation(
        &SegmentationMap::new(edges.height, edges.width, edges.labels())?,
        path,
    )
}

fn save_conditions(dir: &Path, codec: &LatentCodec, conds: &ConditionSet) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    save_codec(codec, Some(&conds.lr_latent), dir.join(CODEC_FILE))?;
    save_cube(&conds.mask.to_plane().into_cube()?, dir.join(MASK_FILE))?;
    save_edges(&conds.edge, &dir.join(EDGE_FILE))
}

fn load_conditions(dir: &Path) -> Result<(LatentCodec, ConditionSet)> {
    let (codec, latent) = load_codec(dir.join(CODEC_FILE))?;
    let latent = latent.ok_or_else(|| Error::Invalid("condition codec holds no latent".into()))?;
    let mask = load_cube(dir.join(MASK_FILE))?;
    if mask.channels() != 1 {
        return Err(Error::Shape("mask raster must have one band".into()));
    }
    let mask: Plane = mask.channel_mean_image();
    let edges = load_segmentation(dir.join(EDGE_FILE))?;
    let values = edges
        .labels
        .iter()
        .map(|&l| match l {
            0 => Ok(0u8),
            1 => Ok(1u8),
            _ => Err(Error::Invalid(format!("edge label {l} is not 0 or 1"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    let conds = ConditionSet::new(
        latent,
        MaskMap {
            height: mask.height,
            width: mask.width,
            values: mask.values,
        },
        EdgeMap::new(edges.height, edges.width, values)?,
    )?;
    Ok((codec, conds))
}
