use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::raycast::intersect_primitive;
use crate::body_model::{Primitive, PrimitiveBody};
use crate::camera::{Camera, Projector};

/// Binary image, row-major, y down.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    data: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("run-length data covers {covered} pixels, mask has {expected}")]
pub struct RleError {
    pub covered: usize,
    pub expected: usize,
}

/// Run-length form: alternating run lengths, starting with unset pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: usize,
    pub height: usize,
    pub runs: Vec<u32>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask { width, height, data: vec![false; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn union_with(&mut self, other: &Mask) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
    }

    pub fn to_rle(&self) -> RleMask {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in &self.data {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        RleMask { width: self.width, height: self.height, runs }
    }

    pub fn from_rle(rle: &RleMask) -> Result<Mask, RleError> {
        let expected = rle.width * rle.height;
        let covered: usize = rle.runs.iter().map(|&r| r as usize).sum();
        if covered != expected {
            return Err(RleError { covered, expected });
        }
        let mut data = Vec::with_capacity(expected);
        for (i, &r) in rle.runs.iter().enumerate() {
            data.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
        }
        Ok(Mask { width: rle.width, height: rle.height, data })
    }
}

/// Screen-space pixel bounds of a primitive, from its bounding cube.
fn pixel_bounds(prim: &Primitive, projector: &Projector, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
    let (c, r) = prim.bounding_sphere();
    let mut lo = Vector2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for corner in 0..8 {
        let offset = Vector3::new(
            if corner & 1 == 0 { -r } else { r },
            if corner & 2 == 0 { -r } else { r },
            if corner & 4 == 0 { -r } else { r },
        );
        // A corner behind the camera makes the bound useless; fall back to the full frame.
        let Ok(p) = projector.project(&(c + offset)) else {
            return Some((0, 0, width - 1, height - 1));
        };
        lo = lo.inf(&p);
        hi = hi.sup(&p);
    }
    let x0 = lo.x.floor().max(0.0) as usize;
    let y0 = lo.y.floor().max(0.0) as usize;
    let x1 = (hi.x.ceil() as i64).min(width as i64 - 1);
    let y1 = (hi.y.ceil() as i64).min(height as i64 - 1);
    if x1 < x0 as i64 || y1 < y0 as i64 {
        return None;
    }
    Some((x0, y0, x1 as usize, y1 as usize))
}

/// Mask of pixels whose centre ray hits any primitive. `resolution` is the
/// mask width; the height follows the camera aspect ratio.
pub fn render_silhouette(body: &PrimitiveBody, camera: &Camera, resolution: usize) -> Mask {
    let resolution = resolution.max(64);
    let scale = resolution as f64 / camera.width as f64;
    let width = resolution;
    let height = ((camera.height as f64 * scale).round() as usize).max(1);
    let projector = Projector::new(camera).scaled(scale);
    let mut mask = Mask::new(width, height);
    for prim in &body.primitives {
        let Some((x0, y0, x1, y1)) = pixel_bounds(prim, &projector, width, height) else { continue };
        for y in y0..=y1 {
            for x in x0..=x1 {
                if mask.get(x, y) {
                    continue;
                }
                let (o, d) = projector.pixel_ray(&Vector2::new(x as f64 + 0.5, y as f64 + 0.5));
                if intersect_primitive(prim, &o, &d).is_some() {
                    mask.set(x, y, true);
                }
            }
        }
    }
    mask
}
