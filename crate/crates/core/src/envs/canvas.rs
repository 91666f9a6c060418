use super::{ColorMode, Observation};

pub type Rgb = [f32; 3];

/// Interleaved RGB raster that renders into planar observations.
#[derive(Clone, Debug)]
pub struct Canvas {
    pub w: usize,
    pub h: usize,
    px: Vec<Rgb>,
}

impl Canvas {
    pub fn new(w: usize, h: usize, fill: Rgb) -> Self {
        Self {
            w,
            h,
            px: vec![fill; w * h],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.px[y * self.w + x]
    }

    pub fn set(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            self.px[y as usize * self.w + x as usize] = c;
        }
    }

    /// Fills the `w x h` block with top-left corner `(x, y)`, clipped.
    pub fn rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: Rgb) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.set(xx, yy, c);
            }
        }
    }

    pub fn to_observation(&self, mode: ColorMode) -> Observation {
        let plane = self.w * self.h;
        let data = match mode {
            ColorMode::Rgb => {
                let mut d = vec![0.0; 3 * plane];
                for (p, c) in self.px.iter().enumerate() {
                    for ch in 0..3 {
                        d[ch * plane + p] = c[ch];
                    }
                }
                d
            }
            ColorMode::Gray => self
                .px
                .iter()
                .map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
                .collect(),
        };
        Observation::new(&[mode.channels(), self.h, self.w], data).expect("canvas extents")
    }
}
