use image::GrayImage;

/// Binary image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

/// Axis-aligned rectangle `[x, x + width) × [y, y + height)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.width && y < self.y + self.height
    }
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Tight bounding box of the set pixels.
    pub fn bbox(&self) -> Option<Rect> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != usize::MAX).then(|| Rect {
            x: x0,
            y: y0,
            width: x1 - x0 + 1,
            height: y1 - y0 + 1,
        })
    }

    /// Intersection over union; two empty masks give 1.
    pub fn iou(&self, other: &Mask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += usize::from(a && b);
            union += usize::from(a || b);
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Square dilation by `radius` pixels (Chebyshev distance).
    pub fn dilate(&self, radius: usize) -> Mask {
        let mut out = Mask::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(x, y) {
                    continue;
                }
                for yy in y.saturating_sub(radius)..(y + radius + 1).min(self.height) {
                    for xx in x.saturating_sub(radius)..(x + radius + 1).min(self.width) {
                        out.set(xx, yy, true);
                    }
                }
            }
        }
        out
    }

    /// Pixels inside a polygon, tested at pixel centers by the even-odd rule.
    pub fn polygon(width: usize, height: usize, vertices: &[(f64, f64)]) -> Mask {
        let mut m = Mask::new(width, height);
        let n = vertices.len();
        if n < 3 {
            return m;
        }
        for y in 0..height {
            let py = y as f64 + 0.5;
            for x in 0..width {
                let px = x as f64 + 0.5;
                let mut inside = false;
                let mut j = n - 1;
                for i in 0..n {
                    let (xi, yi) = vertices[i];
                    let (xj, yj) = vertices[j];
                    if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                m.set(x, y, inside);
            }
        }
        m
    }

    pub fn from_gray(img: &GrayImage) -> Mask {
        Mask {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.pixels().map(|p| p.0[0] > 127).collect(),
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([if self.get(x as usize, y as usize) {
                255
            } else {
                0
            }])
        })
    }

    /// Largest 8-connected component; equal sizes go to the component whose
    /// first pixel in row-major order comes earliest.
    pub fn largest_component(&self) -> Mask {
        let mut label = vec![usize::MAX; self.data.len()];
        let mut best: Option<(usize, usize)> = None;
        let mut stack = Vec::new();
        let mut next = 0;
        for start in 0..self.data.len() {
            if !self.data[start] || label[start] != usize::MAX {
                continue;
            }
            let mut size = 0;
            label[start] = next;
            stack.push(start);
            while let Some(p) = stack.pop() {
                size += 1;
                let (x, y) = ((p % self.width) as isize, (p / self.width) as isize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0
                            || ny < 0
                            || nx >= self.width as isize
                            || ny >= self.height as isize
                        {
                            continue;
                        }
                        let q = ny as usize * self.width + nx as usize;
                        if self.data[q] && label[q] == usize::MAX {
                            label[q] = next;
                            stack.push(q);
                        }
                    }
                }
            }
            if best.is_none_or(|(_, s)| size > s) {
                best = Some((next, size));
            }
            next += 1;
        }
        let mut out = Mask::new(self.width, self.height);
        if let Some((b, _)) = best {
            for (o, &l) in out.data.iter_mut().zip(&label) {
                *o = l == b;
            }
        }
        out
    }
}
