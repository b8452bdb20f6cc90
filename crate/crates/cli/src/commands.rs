use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use log::info;
use srd_core::data::{
    gen_paired, gen_unpaired, load_dataset, save_dataset, write_image, Dataset, Image, MaskedImage, PairedDataset,
    PairedDatasetSpec, UnpairedDataset, UnpairedDatasetSpec,
};
use srd_core::kv::KvMap;
use srd_core::losses::{flatten_features, semrel_matrix, ActivationMatrix};
use srd_core::metrics::{
    accumulate_confusion, downsample_mask, frechet_proxy, grouped_semrel, seg_scores, ConfusionMatrix, GroupedSemrel,
    ProxyExtractor, PROXY_SEED,
};
use srd_core::models::{count_params, load_model, Arch, DiscriminatorSpec, GeneratorSpec, Model};
use srd_core::train::{
    distill_paired_student, distill_student, train_paired_teacher, train_teacher, CycleTeacher, Regime, TrainConfig,
};
use srd_core::Tensor;

use crate::{require_out, resolve_overrides, Command, Common, Failure, StageExt};

pub const RESOLVED_CONFIG: &str = "resolved_config.txt";
const HEATMAPS: usize = 4;

pub(crate) fn dispatch(cmd: &Command) -> Result<(), Failure> {
    match cmd {
        Command::GenData { common } => gen_data(common),
        Command::TrainTeacher { common } => train(common, false),
        Command::Distill { common } => train(common, true),
        Command::Eval { common, checkpoints } => eval(common, checkpoints.as_deref()),
        Command::ExportSemrel { common, checkpoints, sample, layer } => {
            export_semrel(common, checkpoints.as_deref(), *sample, layer.as_deref())
        }
        Command::ReportModel { common, arch, ngf, resolution, n_layers } => {
            report_model(common, arch, *ngf, *resolution, *n_layers)
        }
    }
}

fn prepare_out(out: &Path, resolved: &KvMap) -> Result<(), Failure> {
    std::fs::create_dir_all(out)
        .and_then(|_| std::fs::write(out.join(RESOLVED_CONFIG), resolved.to_text()))
        .with_context(|| format!("writing {}", out.display()))
        .stage("output")
}

fn gen_data(common: &Common) -> Result<(), Failure> {
    let out = require_out(common)?;
    let kv = resolve_overrides(common)?;
    let (data, resolved) = match kv.get("kind").unwrap_or("unpaired") {
        "unpaired" => {
            let spec = UnpairedDatasetSpec::from_kv(&kv).stage("config")?;
            (Dataset::Unpaired(gen_unpaired(&spec).stage("generate")?), spec.to_kv())
        }
        "paired" => {
            let spec = PairedDatasetSpec::from_kv(&kv).stage("config")?;
            (Dataset::Paired(gen_paired(&spec).stage("generate")?), spec.to_kv())
        }
        other => return Err(anyhow!("unknown dataset kind `{other}` (unpaired, paired)")).stage("config"),
    };
    prepare_out(out, &resolved)?;
    save_dataset(out, &data).stage("write dataset")?;
    let n = match &data {
        Dataset::Unpaired(d) => d.train_a.len() + d.test_a.len(),
        Dataset::Paired(d) => d.train.len() + d.test.len(),
    };
    info!("wrote {} dataset with {n} samples per domain to {}", resolved.get("kind").unwrap(), out.display());
    Ok(())
}

fn load_config(common: &Common) -> Result<TrainConfig, Failure> {
    TrainConfig::from_kv(&resolve_overrides(common)?).stage("config")
}

fn dataset_dir(cfg: &TrainConfig) -> Result<&Path, Failure> {
    cfg.dataset.as_deref().ok_or_else(|| anyhow!("`dataset` is not set")).stage("config")
}

fn load_unpaired(cfg: &TrainConfig) -> Result<UnpairedDataset, Failure> {
    match load_dataset(dataset_dir(cfg)?).stage("load dataset")? {
        Dataset::Unpaired(d) => Ok(d),
        Dataset::Paired(_) => Err(anyhow!("unpaired regime needs an unpaired dataset")).stage("load dataset"),
    }
}

fn load_paired(cfg: &TrainConfig) -> Result<PairedDataset, Failure> {
    match load_dataset(dataset_dir(cfg)?).stage("load dataset")? {
        Dataset::Paired(d) => Ok(d),
        Dataset::Unpaired(_) => Err(anyhow!("paired regime needs a paired dataset")).stage("load dataset"),
    }
}

fn load_ckpt(dir: &Path, name: &str) -> anyhow::Result<Model> {
    let path = dir.join(format!("{name}.ckpt"));
    load_model(&path).with_context(|| format!("loading {}", path.display()))
}

fn train(common: &Common, distill: bool) -> Result<(), Failure> {
    let out = require_out(common)?;
    let cfg = load_config(common)?;
    let teacher_dir = if distill {
        Some(cfg.teacher.clone().ok_or_else(|| anyhow!("`teacher` is not set")).stage("config")?)
    } else {
        None
    };
    prepare_out(out, &cfg.to_kv())?;
    info!("{} {} generator {}, {} iterations", cfg.regime, if distill { "student" } else { "teacher" }, cfg.generator, cfg.iterations);

    let history = match cfg.regime {
        Regime::Unpaired => {
            let data = load_unpaired(&cfg)?;
            match teacher_dir {
                None => train_teacher(&data, &cfg, Some(out)).stage("train")?.history,
                Some(dir) => {
                    let teacher = CycleTeacher {
                        g_a: load_ckpt(&dir, "g_a").stage("load teacher")?,
                        g_b: load_ckpt(&dir, "g_b").stage("load teacher")?,
                    };
                    distill_student(&data, &cfg, &teacher, Some(out)).stage("distill")?.history
                }
            }
        }
        Regime::Paired => {
            let data = load_paired(&cfg)?;
            match teacher_dir {
                None => train_paired_teacher(&data, &cfg, Some(out)).stage("train")?.history,
                Some(dir) => {
                    let teacher = load_ckpt(&dir, "g").stage("load teacher")?;
                    distill_paired_student(&data, &cfg, &teacher, Some(out)).stage("distill")?.history
                }
            }
        }
    };
    let last = history.rows().last().map(|(_, v)| v.clone()).unwrap_or_default();
    let summary: Vec<String> = history.columns().iter().zip(&last).map(|(c, v)| format!("{c}={v:.4}")).collect();
    println!("final {}", summary.join(" "));
    Ok(())
}

/// The run config and checkpoint directory an eval-style command reads.
fn run_inputs(common: &Common, checkpoints: Option<&Path>) -> Result<(TrainConfig, PathBuf), Failure> {
    let cfg = load_config(common)?;
    let dir = match checkpoints {
        Some(d) => d.to_path_buf(),
        None => {
            let config = common.config.as_deref().expect("checked before dispatch");
            config.parent().map(Path::to_path_buf).unwrap_or_default()
        }
    };
    Ok((cfg, dir))
}

fn features_at(g: &Model, x: &Tensor, layer: Option<&str>) -> anyhow::Result<ActivationMatrix> {
    let feat = match layer {
        Some(l) => g.forward_split(x, l)?.0,
        None => g.forward_encoded(x)?.0,
    };
    Ok(semrel_matrix(&flatten_features(&feat)?)?)
}

fn grouped_for(g: &Model, image: &Image, mask: &Image, layer: Option<&str>) -> anyhow::Result<(ActivationMatrix, GroupedSemrel)> {
    let a = features_at(g, &image.to_tensor(), layer)?;
    let (h, w) = a.grid();
    let grouped = grouped_semrel(&a, &downsample_mask(mask, h, w)?)?;
    Ok((a, grouped))
}

fn images(s: &[MaskedImage]) -> Vec<&Image> {
    s.iter().map(|m| &m.image).collect()
}

fn translate(g: &Model, images: &[&Image]) -> anyhow::Result<Vec<Tensor>> {
    images.iter().map(|im| Ok(g.forward(&im.to_tensor())?)).collect()
}

fn proxy_fd(ex: &ProxyExtractor, fakes: &[Tensor], reals: &[&Image]) -> anyhow::Result<f64> {
    let reals: Vec<Tensor> = reals.iter().map(|im| im.to_tensor()).collect();
    Ok(frechet_proxy(&ex.features_of(fakes)?, &ex.features_of(&reals)?)?)
}

fn write_text(path: PathBuf, text: &str) -> Result<(), Failure> {
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display())).stage("output")
}

fn eval(common: &Common, checkpoints: Option<&Path>) -> Result<(), Failure> {
    let out = require_out(common)?;
    let (cfg, dir) = run_inputs(common, checkpoints)?;
    prepare_out(out, &cfg.to_kv())?;
    let ex = ProxyExtractor::new(PROXY_SEED);
    let mut summary = KvMap::default();
    let mut report = String::new();
    summary.set("regime", cfg.regime);

    match cfg.regime {
        Regime::Unpaired => {
            let data = load_unpaired(&cfg)?;
            let g_a = load_ckpt(&dir, "g_a").stage("load checkpoint")?;
            let g_b = load_ckpt(&dir, "g_b").stage("load checkpoint")?;
            summary.set("generator", g_a.arch());
            summary.set("params", count_params(&g_a));
            let (ta, tb) = (images(&data.test_a), images(&data.test_b));
            let fd_ab = translate(&g_a, &ta).and_then(|f| proxy_fd(&ex, &f, &tb)).stage("frechet")?;
            let fd_ba = translate(&g_b, &tb).and_then(|f| proxy_fd(&ex, &f, &ta)).stage("frechet")?;
            summary.set("proxy_fd_a2b", fd_ab);
            summary.set("proxy_fd_b2a", fd_ba);

            report.push_str("domain,sample,within,cross,margin\n");
            for (domain, g, samples) in [("a", &g_a, &data.test_a), ("b", &g_b, &data.test_b)] {
                let mut total = 0.0;
                for (i, s) in samples.iter().enumerate() {
                    let (_, gr) = grouped_for(g, &s.image, &s.mask, None).stage("grouped similarity")?;
                    let r = &gr.report;
                    let _ = writeln!(report, "{domain},{i},{},{},{}", r.within, r.cross, r.margin);
                    total += r.margin;
                    if i < HEATMAPS {
                        write_image(out.join(format!("heatmap_{domain}_{i:04}.pgm")), &gr.heatmap).stage("output")?;
                    }
                }
                summary.set(&format!("margin_{domain}"), total / samples.len().max(1) as f64);
            }
        }
        Regime::Paired => {
            let data = load_paired(&cfg)?;
            let g = load_ckpt(&dir, "g").stage("load checkpoint")?;
            summary.set("generator", g.arch());
            summary.set("params", count_params(&g));
            let labels: Vec<&Image> = data.test.iter().map(|s| &s.label).collect();
            let photos: Vec<&Image> = data.test.iter().map(|s| &s.photo).collect();
            let fakes = translate(&g, &labels).stage("translate")?;
            summary.set("proxy_fd", proxy_fd(&ex, &fakes, &photos).stage("frechet")?);

            let palette = &data.spec.palette;
            let mut cm = ConfusionMatrix::new(palette.len());
            let mut total = 0.0;
            report.push_str("sample,pixel_accuracy,class_accuracy,class_iou,within,cross,margin\n");
            for (i, (s, fake)) in data.test.iter().zip(&fakes).enumerate() {
                let photo = Image::from_tensor(fake).stage("segmentation")?;
                accumulate_confusion(&mut cm, &photo, &s.mask, palette).stage("segmentation")?;
                let sc = seg_scores(&photo, &s.mask, palette).stage("segmentation")?;
                let (_, gr) = grouped_for(&g, &s.label, &s.mask, None).stage("grouped similarity")?;
                let r = &gr.report;
                let _ = writeln!(
                    report,
                    "{i},{},{},{},{},{},{}",
                    sc.pixel_accuracy, sc.class_accuracy, sc.class_iou, r.within, r.cross, r.margin
                );
                total += r.margin;
                if i < HEATMAPS {
                    write_image(out.join(format!("heatmap_{i:04}.pgm")), &gr.heatmap).stage("output")?;
                }
            }
            let sc = cm.scores();
            summary.set("pixel_accuracy", sc.pixel_accuracy);
            summary.set("class_accuracy", sc.class_accuracy);
            summary.set("class_iou", sc.class_iou);
            summary.set("margin", total / data.test.len().max(1) as f64);
        }
    }
    write_text(out.join("report.csv"), &report)?;
    write_text(out.join("summary.txt"), &summary.to_text())?;
    print!("{}", summary.to_text());
    Ok(())
}

/// `[−1, 1]` mapped to `[0, 255]` in the matrix's own pixel order.
fn raw_heatmap(a: &ActivationMatrix) -> anyhow::Result<Image> {
    let p = a.pixels();
    let px = a.matrix().data().iter().map(|v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8).collect();
    Ok(Image::new(p, p, 1, px)?)
}

fn matrix_csv(a: &ActivationMatrix) -> String {
    let p = a.pixels();
    let mut s = String::new();
    for row in a.matrix().data().chunks(p) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

fn export_semrel(common: &Common, checkpoints: Option<&Path>, sample: usize, layer: Option<&str>) -> Result<(), Failure> {
    let out = require_out(common)?;
    let (cfg, dir) = run_inputs(common, checkpoints)?;
    prepare_out(out, &cfg.to_kv())?;
    let pick = |n: usize| {
        if sample < n {
            Ok(())
        } else {
            Err(anyhow!("sample {sample} out of range, the held-out split has {n}")).stage("select sample")
        }
    };

    let mut jobs: Vec<(String, Model, Image, Image)> = Vec::new();
    match cfg.regime {
        Regime::Unpaired => {
            let data = load_unpaired(&cfg)?;
            pick(data.test_a.len().min(data.test_b.len()))?;
            for (name, split) in [("g_a", &data.test_a), ("g_b", &data.test_b)] {
                let g = load_ckpt(&dir, name).stage("load checkpoint")?;
                let s = &split[sample];
                jobs.push((name.to_string(), g, s.image.clone(), s.mask.clone()));
            }
        }
        Regime::Paired => {
            let data = load_paired(&cfg)?;
            pick(data.test.len())?;
            let s = &data.test[sample];
            jobs.push(("g".into(), load_ckpt(&dir, "g").stage("load checkpoint")?, s.label.clone(), s.mask.clone()));
        }
    }

    let mut summary = KvMap::default();
    for (name, g, image, mask) in jobs {
        let (a, gr) = grouped_for(&g, &image, &mask, layer).stage("semantic relation")?;
        let stem = format!("semrel_{name}_{sample:04}");
        write_text(out.join(format!("{stem}.csv")), &matrix_csv(&a))?;
        write_image(out.join(format!("{stem}.pgm")), &raw_heatmap(&a).stage("output")?).stage("output")?;
        write_image(out.join(format!("{stem}_grouped.pgm")), &gr.heatmap).stage("output")?;
        let (h, w) = a.grid();
        summary.set(&format!("{name}_layer"), layer.unwrap_or(g.encoder_endpoint()));
        summary.set(&format!("{name}_grid"), format!("{h}x{w}"));
        summary.set(&format!("{name}_margin"), gr.report.margin);
    }
    write_text(out.join("summary.txt"), &summary.to_text())?;
    print!("{}", summary.to_text());
    Ok(())
}

fn report_model(common: &Common, arch: &str, ngf: usize, resolution: usize, n_layers: usize) -> Result<(), Failure> {
    let spec = if arch == "patchgan" {
        Arch::Discriminator(DiscriminatorSpec { ndf: ngf, n_layers, ..Default::default() })
    } else {
        let g = GeneratorSpec::from_arch_name(arch, ngf).map_err(|e| Failure::Usage(e.to_string()))?;
        // a bare `unet` means the topology for the requested resolution
        let g = if arch == "unet" { GeneratorSpec::unet_for(ngf, resolution) } else { g.with_resolution(resolution) };
        Arch::Generator(g)
    };
    let result = (|| -> anyhow::Result<KvMap> {
        spec.validate()?;
        let params = spec.param_count();
        let flops = spec.flops(resolution)?;
        let mut kv = KvMap::default();
        kv.set("arch", &spec);
        kv.set("resolution", resolution);
        kv.set("params", params);
        kv.set("params_millions", format!("{:.2}", params as f64 / 1e6));
        kv.set("flops", flops);
        kv.set("gflops", format!("{:.2}", flops as f64 / 1e9));
        if flops == 0 {
            bail!("architecture has no convolutions");
        }
        Ok(kv)
    })();
    let kv = result.stage("model report")?;
    if let Some(out) = &common.out {
        prepare_out(out, &kv)?;
        write_text(out.join("model.txt"), &kv.to_text())?;
    }
    print!("{}", kv.to_text());
    Ok(())
}
