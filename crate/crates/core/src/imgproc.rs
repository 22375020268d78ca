//! Raster primitives: histogram equalization, polygon rasterization,
//! crop/pad/resize with annotation remapping, and masked compositing.
//!
//! Coordinate convention throughout: continuous pixel coordinates with the
//! origin at the top-left corner of the top-left pixel, y down. Pixel (i, j)
//! covers [i, i+1) x [j, j+1) and has its center at (i+0.5, j+0.5).

use serde::{Deserialize, Serialize};

use crate::dental::{BBox, PolygonMask, ToothAnnotation};
use crate::error::{Error, Result};
use crate::raster::{BitMask, GrayImage};

/// Round half away from zero toward positive infinity: floor(x + 0.5).
#[inline]
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

#[inline]
fn quantize(v: f64) -> u8 {
    round_half_up(v).clamp(0.0, 255.0) as u8
}

/// A 2x3 affine transform mapping source (x, y) to destination coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    /// Row-major coefficients [a, b, c, d, e, f]:
    /// x' = a*x + b*y + c, y' = d*x + e*y + f.
    pub coeffs: [f64; 6],
}

impl AffineMap {
    pub fn identity() -> Self {
        Self {
            coeffs: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            coeffs: [1.0, 0.0, dx, 0.0, 1.0, dy],
        }
    }

    pub fn scaling(s: f64) -> Self {
        Self {
            coeffs: [s, 0.0, 0.0, 0.0, s, 0.0],
        }
    }

    /// Rotation by `theta_deg` about (cx, cy), using the standard matrix
    /// [[cos, -sin], [sin, cos]] on (x, y) offsets.
    pub fn rotation_about_deg(theta_deg: f64, cx: f64, cy: f64) -> Self {
        let t = theta_deg.to_radians();
        let (sin, cos) = t.sin_cos();
        Self {
            coeffs: [
                cos,
                -sin,
                cx - cos * cx + sin * cy,
                sin,
                cos,
                cy - sin * cx - cos * cy,
            ],
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b, c, d, e, f] = self.coeffs;
        (a * x + b * y + c, d * x + e * y + f)
    }

    /// Determinant of the 2x2 linear part.
    pub fn det(&self) -> f64 {
        let [a, b, _, d, e, _] = self.coeffs;
        a * e - b * d
    }

    /// Composition applying `self` first, then `next`.
    pub fn then(&self, next: &AffineMap) -> AffineMap {
        let [a1, b1, c1, d1, e1, f1] = self.coeffs;
        let [a2, b2, c2, d2, e2, f2] = next.coeffs;
        AffineMap {
            coeffs: [
                a2 * a1 + b2 * d1,
                a2 * b1 + b2 * e1,
                a2 * c1 + b2 * f1 + c2,
                d2 * a1 + e2 * d1,
                d2 * b1 + e2 * e1,
                d2 * c1 + e2 * f1 + f2,
            ],
        }
    }

    pub fn inverse(&self) -> Result<AffineMap> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Validation(format!(
                "affine map is not invertible (det = {det})"
            )));
        }
        let [a, b, c, d, e, f] = self.coeffs;
        let (ia, ib, id, ie) = (e / det, -b / det, -d / det, a / det);
        Ok(AffineMap {
            coeffs: [ia, ib, -(ia * c + ib * f), id, ie, -(id * c + ie * f)],
        })
    }

    pub fn map_polygon(&self, poly: &PolygonMask) -> PolygonMask {
        PolygonMask {
            vertices: poly
                .vertices
                .iter()
                .map(|&(x, y)| self.apply(x, y))
                .collect(),
        }
    }
}

/// Equalize the histogram of an 8-bit grayscale image.
///
/// v' = round((cdf(v) - cdf_min) / (Npix - cdf_min) * 255) with cdf the
/// cumulative pixel-count histogram and cdf_min its smallest non-zero value.
/// Constant images come back unchanged (the formula degenerates to 0/0).
pub fn equalize_histogram(img: &GrayImage) -> Result<GrayImage> {
    if img.is_empty() {
        return Err(Error::EmptyImage);
    }
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[v as usize] += 1;
    }
    let mut cdf = [0u64; 256];
    let mut acc = 0u64;
    for (i, &h) in hist.iter().enumerate() {
        acc += h;
        cdf[i] = acc;
    }
    let n = img.pixel_count() as u64;
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    if cdf_min == n {
        return Ok(img.clone());
    }
    let denom = (n - cdf_min) as f64;
    let mut lut = [0u8; 256];
    for (i, out) in lut.iter_mut().enumerate() {
        let num = cdf[i].saturating_sub(cdf_min) as f64;
        *out = quantize(num / denom * 255.0);
    }
    let data = img.data().iter().map(|&v| lut[v as usize]).collect();
    GrayImage::from_raw(img.width(), img.height(), data)
}

/// Crossings of polygon edges with the horizontal line y = py, using the
/// half-open rule (y1 > py) != (y2 > py). The same formula drives both the
/// scanline fill and the point-in-polygon test, so they agree bit for bit.
fn scanline_crossings(vertices: &[(f64, f64)], py: f64, out: &mut Vec<f64>) {
    out.clear();
    let n = vertices.len();
    for i in 0..n {
        let (x1, y1) = vertices[i];
        let (x2, y2) = vertices[(i + 1) % n];
        if (y1 > py) != (y2 > py) {
            out.push(x1 + (x2 - x1) * (py - y1) / (y2 - y1));
        }
    }
    out.sort_by(|a, b| a.total_cmp(b));
}

/// Rasterize a polygon with scanline even-odd fill: a pixel is set iff its
/// center (x+0.5, y+0.5) lies inside the polygon. Pixels outside the
/// [0,width) x [0,height) canvas are clipped.
///
/// A polygon covering no pixel center yields [`Error::DegenerateMask`].
pub fn rasterize_polygon(poly: &PolygonMask, width: u32, height: u32) -> Result<BitMask> {
    let mut mask = BitMask::zeroed(width, height);
    let mut crossings = Vec::new();
    let mut any = false;
    for j in 0..height {
        let py = f64::from(j) + 0.5;
        scanline_crossings(&poly.vertices, py, &mut crossings);
        for pair in crossings.chunks_exact(2) {
            // Pixel centers in [pair[0], pair[1]).
            let start = (pair[0] - 0.5).ceil().max(0.0) as i64;
            let end = (pair[1] - 0.5).ceil().min(f64::from(width)) as i64;
            for i in start..end {
                mask.set(i as u32, j, true);
                any = true;
            }
        }
    }
    if any {
        Ok(mask)
    } else {
        Err(Error::DegenerateMask)
    }
}

/// Clip a polygon to the rectangle [0, w] x [0, h] (Sutherland-Hodgman).
/// Returns None when nothing with positive area remains.
pub fn clip_polygon_to_rect(poly: &PolygonMask, w: f64, h: f64) -> Option<PolygonMask> {
    // Each half-plane: keep(p) true when p is inside.
    type Keep = fn(f64, f64, f64) -> bool;
    let planes: [(Keep, f64); 4] = [
        (|x, _, bound| x >= bound, 0.0),
        (|x, _, bound| x <= bound, w),
        (|_, y, bound| y >= bound, 0.0),
        (|_, y, bound| y <= bound, h),
    ];
    let mut current = poly.vertices.clone();
    for (plane_idx, (keep, bound)) in planes.iter().enumerate() {
        if current.is_empty() {
            return None;
        }
        let mut next = Vec::with_capacity(current.len() + 4);
        let n = current.len();
        for i in 0..n {
            let (x1, y1) = current[i];
            let (x2, y2) = current[(i + 1) % n];
            let in1 = keep(x1, y1, *bound);
            let in2 = keep(x2, y2, *bound);
            if in1 != in2 {
                // Intersection with a vertical (x = bound) or horizontal plane.
                let t = if plane_idx < 2 {
                    (bound - x1) / (x2 - x1)
                } else {
                    (bound - y1) / (y2 - y1)
                };
                next.push((x1 + t * (x2 - x1), y1 + t * (y2 - y1)));
            }
            if in2 {
                next.push((x2, y2));
            }
        }
        current = next;
    }
    if current.len() < 3 {
        return None;
    }
    let clipped = PolygonMask { vertices: current };
    if clipped.area() <= 0.0 {
        return None;
    }
    Some(clipped)
}

/// How out-of-range samples behave during interpolation.
#[derive(Debug, Clone, Copy)]
pub enum Border {
    Clamp,
    Constant(u8),
}

/// Bilinear sample at a continuous position (pixel centers at i+0.5).
pub fn sample_bilinear(img: &GrayImage, x: f64, y: f64, border: Border) -> f64 {
    let u = x - 0.5;
    let v = y - 0.5;
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = u - x0;
    let fy = v - y0;
    let fetch = |xi: f64, yi: f64| -> f64 {
        let (w, h) = (i64::from(img.width()), i64::from(img.height()));
        let (mut xi, mut yi) = (xi as i64, yi as i64);
        match border {
            Border::Clamp => {
                xi = xi.clamp(0, w - 1);
                yi = yi.clamp(0, h - 1);
            }
            Border::Constant(pad) => {
                if xi < 0 || xi >= w || yi < 0 || yi >= h {
                    return f64::from(pad);
                }
            }
        }
        f64::from(img.get(xi as u32, yi as u32))
    };
    let v00 = fetch(x0, y0);
    let v10 = fetch(x0 + 1.0, y0);
    let v01 = fetch(x0, y0 + 1.0);
    let v11 = fetch(x0 + 1.0, y0 + 1.0);
    (v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy) + (v01 * (1.0 - fx) + v11 * fx) * fy
}

/// Resample `img` through the inverse of `map` onto a `width` x `height`
/// canvas. `map` is the forward source-to-destination transform.
pub fn warp_image(
    img: &GrayImage,
    map: &AffineMap,
    width: u32,
    height: u32,
    border: Border,
) -> Result<GrayImage> {
    let inv = map.inverse()?;
    let mut data = Vec::with_capacity(width as usize * height as usize);
    for j in 0..height {
        for i in 0..width {
            let (sx, sy) = inv.apply(f64::from(i) + 0.5, f64::from(j) + 0.5);
            data.push(quantize(sample_bilinear(img, sx, sy, border)));
        }
    }
    GrayImage::from_raw(width, height, data)
}

/// Options for [`crop_pad_resize`]. The defaults match the preprocessing
/// pipeline: 1024x1024 output, 10% crop margin, zero-intensity padding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub target_size: u32,
    pub margin_frac: f64,
    pub pad_value: u8,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            target_size: 1024,
            margin_frac: 0.1,
            pad_value: 0,
        }
    }
}

/// Outcome of [`crop_pad_resize`]: the resized raster, remapped annotations,
/// the composite source-to-destination transform, and any annotations dropped
/// because they left the canvas entirely.
#[derive(Debug, Clone)]
pub struct CropPadResize {
    pub image: GrayImage,
    pub annotations: Vec<ToothAnnotation>,
    pub map: AffineMap,
    pub dropped: Vec<String>,
}

/// Crop to a region of interest, pad the short axis centered to a square,
/// and resize to the target size, remapping all annotations.
///
/// When `roi` is None the region defaults to the union of annotation bboxes
/// expanded by `margin_frac` per side (the full image if there are no
/// annotations).
pub fn crop_pad_resize(
    img: &GrayImage,
    annotations: &[ToothAnnotation],
    roi: Option<BBox>,
    opts: &PreprocessOptions,
) -> Result<CropPadResize> {
    if img.is_empty() {
        return Err(Error::EmptyImage);
    }
    let (w, h) = (f64::from(img.width()), f64::from(img.height()));
    let region = match roi {
        Some(r) => r,
        None => match annotations
            .iter()
            .map(|a| a.bbox)
            .reduce(|acc, b| acc.union_bounds(&b))
        {
            Some(union) => BBox {
                x: union.x - union.w * opts.margin_frac,
                y: union.y - union.h * opts.margin_frac,
                w: union.w * (1.0 + 2.0 * opts.margin_frac),
                h: union.h * (1.0 + 2.0 * opts.margin_frac),
            },
            None => BBox {
                x: 0.0,
                y: 0.0,
                w,
                h,
            },
        },
    };

    // Integer crop rectangle clamped to the image.
    let x0 = region.x.floor().max(0.0) as u32;
    let y0 = region.y.floor().max(0.0) as u32;
    let x1 = (region.right().ceil().min(w) as u32).min(img.width());
    let y1 = (region.bottom().ceil().min(h) as u32).min(img.height());
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::EmptyRoiIntersection);
    }
    let (crop_w, crop_h) = (x1 - x0, y1 - y0);
    let cropped = img.crop(x0, y0, crop_w, crop_h)?;

    // Center the cropped content in a square canvas.
    let side = crop_w.max(crop_h);
    let pad_left = (side - crop_w) / 2;
    let pad_top = (side - crop_h) / 2;
    let mut square = GrayImage::filled(side, side, opts.pad_value);
    for row in 0..crop_h {
        for col in 0..crop_w {
            square.set(pad_left + col, pad_top + row, cropped.get(col, row));
        }
    }

    let scale = f64::from(opts.target_size) / f64::from(side);
    let map = AffineMap::translation(-f64::from(x0), -f64::from(y0))
        .then(&AffineMap::translation(
            f64::from(pad_left),
            f64::from(pad_top),
        ))
        .then(&AffineMap::scaling(scale));

    // Resize the square canvas; equivalent to warping through `map` but
    // avoids resampling across the crop boundary.
    let resized = warp_image(
        &square,
        &AffineMap::scaling(scale),
        opts.target_size,
        opts.target_size,
        Border::Clamp,
    )?;

    let target = f64::from(opts.target_size);
    let mut mapped = Vec::with_capacity(annotations.len());
    let mut dropped = Vec::new();
    for ann in annotations {
        let poly = map.map_polygon(&ann.mask);
        match clip_polygon_to_rect(&poly, target, target) {
            Some(clipped) => mapped.push(ToothAnnotation::from_polygon(ann.tooth, clipped)?),
            None => dropped.push(format!(
                "tooth {} left the canvas during crop/pad/resize",
                ann.tooth
            )),
        }
    }

    Ok(CropPadResize {
        image: resized,
        annotations: mapped,
        map,
        dropped,
    })
}

/// Paste `tooth_pixels` into `dst` wherever `tooth_mask` is set, with the
/// patch origin at the (rounded) top-left corner of `at`. Out-of-bounds parts
/// are clipped; the return reports whether clipping occurred.
pub fn composite_tooth(
    dst: &mut GrayImage,
    tooth_pixels: &GrayImage,
    tooth_mask: &BitMask,
    at: &BBox,
) -> Result<bool> {
    if tooth_pixels.width() != tooth_mask.width() || tooth_pixels.height() != tooth_mask.height() {
        return Err(Error::RasterSizeMismatch(format!(
            "tooth patch {}x{} vs mask {}x{}",
            tooth_pixels.width(),
            tooth_pixels.height(),
            tooth_mask.width(),
            tooth_mask.height()
        )));
    }
    let ox = round_half_up(at.x) as i64;
    let oy = round_half_up(at.y) as i64;
    let (dw, dh) = (i64::from(dst.width()), i64::from(dst.height()));
    let mut clipped = false;
    for py in 0..tooth_pixels.height() {
        for px in 0..tooth_pixels.width() {
            if !tooth_mask.get(px, py) {
                continue;
            }
            let x = ox + i64::from(px);
            let y = oy + i64::from(py);
            if x < 0 || x >= dw || y < 0 || y >= dh {
                clipped = true;
                continue;
            }
            dst.set(x as u32, y as u32, tooth_pixels.get(px, py));
        }
    }
    Ok(clipped)
}
