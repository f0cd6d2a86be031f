//! PNG rendering of image grids: values in [-1,1] map linearly onto
//! 0..255, cells are laid out row-major with a thin separator.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const GAP: usize = 2;

fn to_byte(v: f32) -> u8 {
    let px = (v + 1.0) * 127.5;
    px.round().clamp(0.0, 255.0) as u8
}

/// Writes `images` (each (C,H,W) or (1,C,H,W) in [-1,1]) as a rows x cols
/// grid. Missing trailing cells stay black.
pub fn write_image_grid(
    path: &Path,
    images: &[Tensor<f32>],
    rows: usize,
    cols: usize,
) -> Result<()> {
    if images.is_empty() || rows * cols == 0 {
        return Err(Error::invalid("empty image grid"));
    }
    if images.len() > rows * cols {
        return Err(Error::invalid(format!(
            "{} images do not fit a {rows}x{cols} grid",
            images.len()
        )));
    }
    let norm_shape = |t: &Tensor<f32>| -> Result<(usize, usize, usize)> {
        match t.shape() {
            [c, h, w] => Ok((*c, *h, *w)),
            [1, c, h, w] => Ok((*c, *h, *w)),
            other => Err(Error::invalid(format!("grid cell has shape {other:?}"))),
        }
    };
    let (c0, h, w) = norm_shape(&images[0])?;
    if c0 != 3 && c0 != 1 {
        return Err(Error::invalid("grid cells must have 1 or 3 channels"));
    }
    for t in images {
        let (c, hh, ww) = norm_shape(t)?;
        if (c, hh, ww) != (c0, h, w) {
            return Err(Error::shape("grid cell shapes", t.shape(), images[0].shape()));
        }
    }
    let out_w = cols * w + (cols - 1) * GAP;
    let out_h = rows * h + (rows - 1) * GAP;
    let mut img = image::RgbImage::new(out_w as u32, out_h as u32);
    for (idx, t) in images.iter().enumerate() {
        let (row, col) = (idx / cols, idx % cols);
        let (y0, x0) = (row * (h + GAP), col * (w + GAP));
        let plane = h * w;
        for y in 0..h {
            for x in 0..w {
                let rgb = if c0 == 3 {
                    [
                        to_byte(t.data()[y * w + x]),
                        to_byte(t.data()[plane + y * w + x]),
                        to_byte(t.data()[2 * plane + y * w + x]),
                    ]
                } else {
                    let v = to_byte(t.data()[y * w + x]);
                    [v, v, v]
                };
                img.put_pixel((x0 + x) as u32, (y0 + y) as u32, image::Rgb(rgb));
            }
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
        }
    }
    img.save(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        detail: format!("png encode: {e}"),
    })
}

/// Pulls one image out of an (N,C,H,W) batch as a (C,H,W) tensor.
pub fn nth_image(batch: &Tensor<f32>, i: usize) -> Result<Tensor<f32>> {
    let s = batch.shape();
    if s.len() != 4 || i >= s[0] {
        return Err(Error::invalid(format!("no image {i} in batch of shape {s:?}")));
    }
    let per = s[1] * s[2] * s[3];
    Tensor::new(vec![s[1], s[2], s[3]], batch.data()[i * per..(i + 1) * per].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_mapping_and_determinism() {
        let neg = Tensor::full(&[3, 4, 4], -1.0);
        let pos = Tensor::full(&[3, 4, 4], 1.0);
        let dir = std::env::temp_dir();
        let p1 = dir.join(format!("metamorph_grid_a_{}.png", std::process::id()));
        let p2 = dir.join(format!("metamorph_grid_b_{}.png", std::process::id()));
        write_image_grid(&p1, &[neg.clone(), pos.clone()], 1, 2).unwrap();
        write_image_grid(&p2, &[neg, pos], 1, 2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let img = image::open(&p1).unwrap().to_rgb8();
        assert_eq!(img.get_pixel(0, 0).0, [0, 0, 0]);
        assert_eq!(img.get_pixel((4 + GAP) as u32, 0).0, [255, 255, 255]);
        let _ = std::fs::remove_file(&p1);
        let _ = std::fs::remove_file(&p2);
    }

    #[test]
    fn oversized_input_rejected() {
        let t = Tensor::<f32>::zeros(&[3, 2, 2]);
        let dir = std::env::temp_dir().join("metamorph_never.png");
        assert!(write_image_grid(&dir, &[t.clone(), t.clone(), t], 1, 2).is_err());
    }
}
