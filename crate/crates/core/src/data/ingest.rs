//! Image-folder ingestion with a CelebA-style attribute list.
//!
//! The attribute file is whitespace-separated text: an optional count
//! line, an optional header naming each column, then one row per image
//! with the filename followed by {-1,1} flags. Rows selecting exactly
//! one of the requested attributes are kept; the rest are counted and
//! skipped.

use std::path::Path;

use image::imageops::FilterType;

use super::{AttributeSet, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestStats {
    pub total_rows: usize,
    pub kept: usize,
    pub skipped_label: usize,
    pub skipped_unreadable: usize,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

/// Maps requested attribute names onto column positions. With a header
/// (CelebA layout) names are matched; without one, columns are assumed to
/// be exactly the requested attributes in order.
fn column_plan(header: Option<&[&str]>, attrs: &AttributeSet) -> Result<Vec<usize>> {
    match header {
        Some(names) => attrs
            .names
            .iter()
            .map(|want| {
                names
                    .iter()
                    .position(|h| h == want)
                    .ok_or_else(|| Error::invalid(format!("attribute {want:?} not in header")))
            })
            .collect(),
        None => Ok((0..attrs.n_domains()).collect()),
    }
}

/// Center-crop to the largest centered square, bilinear-resize to
/// `target_size`, scale to [-1,1].
fn decode_image(path: &Path, target_size: usize) -> Result<Vec<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            detail: format!("image decode: {e}"),
        })?
        .to_rgb8();
    let (w, h) = (img.width(), img.height());
    let side = w.min(h);
    let x0 = (w - side) / 2;
    let y0 = (h - side) / 2;
    let cropped = image::imageops::crop_imm(&img, x0, y0, side, side).to_image();
    let resized = image::imageops::resize(
        &cropped,
        target_size as u32,
        target_size as u32,
        FilterType::Triangle,
    );
    let hw = target_size * target_size;
    let mut out = vec![0.0f32; 3 * hw];
    for (p, px) in resized.pixels().enumerate() {
        for c in 0..3 {
            out[c * hw + p] = px.0[c] as f32 / 127.5 - 1.0;
        }
    }
    Ok(out)
}

pub fn load_image_folder(
    dir: &Path,
    attr_file: &Path,
    attrs: &AttributeSet,
    target_size: usize,
) -> Result<(Dataset, IngestStats)> {
    attrs.validate()?;
    if target_size < 8 {
        return Err(Error::invalid("target_size must be at least 8"));
    }
    let text = std::fs::read_to_string(attr_file).map_err(|e| io_err(attr_file, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();

    // CelebA layout: a lone integer count line, then a header of names
    let mut header_names: Option<Vec<&str>> = None;
    if let Some(first) = lines.peek() {
        let toks: Vec<&str> = first.split_whitespace().collect();
        if toks.len() == 1 && toks[0].parse::<u64>().is_ok() {
            lines.next();
            let header = lines
                .next()
                .ok_or_else(|| Error::invalid("attribute list ends after the count line"))?;
            header_names = Some(header.split_whitespace().collect());
        }
    }
    let plan = column_plan(header_names.as_deref(), attrs)?;

    let k = attrs.n_domains();
    let mut stats = IngestStats::default();
    let mut rows: Vec<(String, usize)> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        stats.total_rows += 1;
        let filename = toks[0];
        let values = &toks[1..];
        let max_col = *plan.iter().max().expect("non-empty plan");
        if values.len() <= max_col {
            stats.skipped_label += 1;
            continue;
        }
        let mut selected = Vec::with_capacity(k);
        let mut parse_ok = true;
        for &col in &plan {
            match values[col] {
                "1" => selected.push(true),
                "-1" => selected.push(false),
                other => {
                    // tolerate unicode minus from copied tables
                    if other == "\u{2212}1" {
                        selected.push(false);
                    } else {
                        parse_ok = false;
                        break;
                    }
                }
            }
        }
        if !parse_ok || selected.iter().filter(|&&v| v).count() != 1 {
            stats.skipped_label += 1;
            continue;
        }
        let domain = selected.iter().position(|&v| v).unwrap();
        rows.push((filename.to_string(), domain));
    }

    let mut pixels: Vec<f32> = Vec::new();
    let mut domains: Vec<usize> = Vec::new();
    for (filename, domain) in rows {
        match decode_image(&dir.join(&filename), target_size) {
            Ok(px) => {
                pixels.extend_from_slice(&px);
                domains.push(domain);
                stats.kept += 1;
            }
            Err(_) => {
                stats.skipped_unreadable += 1;
            }
        }
    }
    if stats.kept == 0 {
        return Err(Error::invalid(format!(
            "no usable images: {} rows, {} skipped by label, {} unreadable",
            stats.total_rows, stats.skipped_label, stats.skipped_unreadable
        )));
    }

    let n = domains.len();
    let images = Tensor::new(vec![n, 3, target_size, target_size], pixels)?;
    let mut labels = Tensor::zeros(&[n, k]);
    for (i, &d) in domains.iter().enumerate() {
        labels.data_mut()[i * k + d] = 1.0;
    }
    let ds = Dataset {
        images,
        labels,
        attrs: attrs.clone(),
        split: "full".into(),
        provenance: format!("folder({})", dir.display()),
    };
    ds.validate()?;
    Ok((ds, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, w: u32, h: u32) {
        let img = image::RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([(x % 256) as u8, (y % 256) as u8, 128])
        });
        img.save(path).unwrap();
    }

    fn temp_dir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("metamorph_ingest_{tag}_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn celeba_layout_crop_and_labels() {
        let dir = temp_dir("celeba");
        write_png(&dir.join("img1.png"), 178, 218);
        write_png(&dir.join("img2.png"), 178, 218);
        write_png(&dir.join("img3.png"), 178, 218);
        let attr = dir.join("list_attr.txt");
        std::fs::write(
            &attr,
            "3\nBangs blond black brown gray Smiling\n\
             img1.png 1 1 -1 -1 -1 1\n\
             img2.png -1 -1 1 -1 -1 -1\n\
             img3.png 1 1 1 -1 -1 1\n",
        )
        .unwrap();
        let attrs = AttributeSet::from_names(
            ["blond", "black", "brown", "gray"].map(String::from).to_vec(),
        )
        .unwrap();
        let (ds, stats) = load_image_folder(&dir, &attr, &attrs, 128).unwrap();
        // img3 selects two attributes -> skipped
        assert_eq!(stats.total_rows, 3);
        assert_eq!(stats.kept, 2);
        assert_eq!(stats.skipped_label, 1);
        assert_eq!(stats.kept + stats.skipped_label + stats.skipped_unreadable, stats.total_rows);
        assert_eq!(ds.images.shape(), &[2, 3, 128, 128]);
        assert_eq!(ds.domain_of(0), 0);
        assert_eq!(ds.domain_of(1), 1);
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn headerless_layout_and_unreadable_files() {
        let dir = temp_dir("plain");
        write_png(&dir.join("a.png"), 40, 40);
        std::fs::write(dir.join("broken.png"), b"not a png").unwrap();
        let attr = dir.join("attrs.txt");
        std::fs::write(&attr, "a.png 1 -1 -1 -1\nbroken.png -1 1 -1 -1\nmissing.png -1 -1 1 -1\n")
            .unwrap();
        let attrs = AttributeSet::default_hair();
        let (ds, stats) = load_image_folder(&dir, &attr, &attrs, 16).unwrap();
        assert_eq!(stats.kept, 1);
        assert_eq!(stats.skipped_unreadable, 2);
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.domain_of(0), 0);
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn zero_usable_images_rejected() {
        let dir = temp_dir("empty");
        let attr = dir.join("attrs.txt");
        std::fs::write(&attr, "a.png 1 1 -1 -1\n").unwrap();
        let attrs = AttributeSet::default_hair();
        assert!(load_image_folder(&dir, &attr, &attrs, 16).is_err());
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn missing_header_attribute_rejected() {
        let dir = temp_dir("badheader");
        let attr = dir.join("attrs.txt");
        std::fs::write(&attr, "1\nred green\nimg.png 1 -1\n").unwrap();
        let attrs = AttributeSet::default_hair();
        assert!(load_image_folder(&dir, &attr, &attrs, 16).is_err());
        let _ = std::fs::remove_dir_all(&dir);
    }
}
