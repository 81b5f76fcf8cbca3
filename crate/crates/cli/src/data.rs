//! On-disk dataset layout.
//!
//! ```text
//! schema.txt      column sidecar
//! tabular.csv     one row per sample, empty cell = missing
//! labels.csv      `class` | `label_0,label_1,..` | `target_0,target_1,..`
//! images.bin      little-endian f64 pixels, images back to back
//! images.idx      csv `offset,height,width`, offset counted in pixels
//! importance.csv  optional `rank,attribute,score`, strongest first
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use rovtl_core::encoders::Image;
use rovtl_core::tabular::io::{read_samples, read_schema, write_samples, write_schema};
use rovtl_core::tabular::{AttributeSchema, ImportanceRanking};
use rovtl_core::{Dataset, Label};

pub fn write_dataset(dir: &Path, data: &Dataset, importance: Option<&ImportanceRanking>) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_schema(&dir.join("schema.txt"), &data.schema)?;
    write_samples(BufWriter::new(File::create(dir.join("tabular.csv"))?), &data.schema, &data.tabular)?;
    write_labels(&dir.join("labels.csv"), &data.labels)?;
    write_images(dir, &data.images)?;
    if let Some(r) = importance {
        write_importance(&dir.join("importance.csv"), &data.schema, r)?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> anyhow::Result<(Dataset, Option<ImportanceRanking>)> {
    let schema = Arc::new(read_schema(&dir.join("schema.txt")).context("schema.txt")?);
    let tabular = read_samples(BufReader::new(File::open(dir.join("tabular.csv"))?), &schema).context("tabular.csv")?;
    let labels = read_labels(&dir.join("labels.csv"))?;
    let images = read_images(dir)?;
    let path = dir.join("importance.csv");
    let importance = if path.exists() {
        Some(read_importance(&path, &schema)?)
    } else {
        None
    };
    Ok((Dataset::new(schema, images, tabular, labels)?, importance))
}

fn write_labels(path: &Path, labels: &[Label]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = match labels.first() {
        None | Some(Label::Class(_)) => vec!["class".into()],
        Some(Label::Multi(b)) => (0..b.len()).map(|j| format!("label_{j}")).collect(),
        Some(Label::Real(v)) => (0..v.len()).map(|j| format!("target_{j}")).collect(),
    };
    w.write_record(&header)?;
    for l in labels {
        let row: Vec<String> = match l {
            Label::Class(c) => vec![c.to_string()],
            Label::Multi(b) => b.iter().map(|&x| u8::from(x).to_string()).collect(),
            Label::Real(v) => v.iter().map(|x| format!("{x}")).collect(),
        };
        if row.len() != header.len() {
            bail!("labels have mixed widths");
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_labels(path: &Path) -> anyhow::Result<Vec<Label>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = r.headers()?.clone();
    let first = header.get(0).unwrap_or_default();
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || format!("labels.csv row {}", i + 1);
        out.push(if first == "class" {
            Label::Class(rec[0].parse().with_context(bad)?)
        } else if first.starts_with("label_") {
            Label::Multi(
                rec.iter()
                    .map(|c| match c {
                        "0" => Ok(false),
                        "1" => Ok(true),
                        _ => bail!("{}: {c:?} is not 0 or 1", bad()),
                    })
                    .collect::<anyhow::Result<_>>()?,
            )
        } else if first.starts_with("target_") {
            Label::Real(rec.iter().map(|c| c.parse::<f64>()).collect::<Result<_, _>>().with_context(bad)?)
        } else {
            bail!("labels.csv header must start with class, label_0 or target_0");
        });
    }
    Ok(out)
}

fn write_images(dir: &Path, images: &[Image]) -> anyhow::Result<()> {
    let mut bin = BufWriter::new(File::create(dir.join("images.bin"))?);
    let mut idx = csv::Writer::from_path(dir.join("images.idx"))?;
    idx.write_record(["offset", "height", "width"])?;
    let mut offset = 0usize;
    for img in images {
        for p in &img.pixels {
            bin.write_all(&p.to_le_bytes())?;
        }
        idx.write_record([offset.to_string(), img.height.to_string(), img.width.to_string()])?;
        offset += img.pixels.len();
    }
    bin.flush()?;
    idx.flush()?;
    Ok(())
}

fn read_images(dir: &Path) -> anyhow::Result<Vec<Image>> {
    let mut raw = Vec::new();
    File::open(dir.join("images.bin"))?.read_to_end(&mut raw)?;
    if raw.len() % 8 != 0 {
        bail!("images.bin length is not a multiple of 8");
    }
    let pixels: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut r = csv::Reader::from_path(dir.join("images.idx"))?;
    let mut out = Vec::new();
    for rec in r.deserialize::<(usize, usize, usize)>() {
        let (offset, h, w) = rec?;
        let end = offset + h * w;
        if end > pixels.len() {
            bail!("images.idx points past the end of images.bin");
        }
        out.push(Image::new(h, w, pixels[offset..end].to_vec())?);
    }
    Ok(out)
}

pub fn write_importance(path: &Path, schema: &AttributeSchema, ranking: &ImportanceRanking) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rank", "attribute", "score"])?;
    for (rank, &c) in ranking.order().iter().enumerate() {
        w.write_record([rank.to_string(), schema.column(c).name.clone(), format!("{}", ranking.scores()[c])])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_importance(path: &Path, schema: &AttributeSchema) -> anyhow::Result<ImportanceRanking> {
    let mut r = csv::Reader::from_path(path)?;
    let mut order = Vec::new();
    let mut scores = vec![0.0; schema.len()];
    for rec in r.deserialize::<(usize, String, f64)>() {
        let (_, name, score) = rec?;
        let c = schema
            .index_of(&name)
            .with_context(|| format!("importance.csv names unknown attribute {name:?}"))?;
        order.push(c);
        scores[c] = score;
    }
    Ok(ImportanceRanking::new(order, scores)?)
}
