//! Reference loss written with plain loops, sharing no code with the
//! library's batched forward pass, sampler or backpropagation.

use neural_velocimetry::{DisplacementModel, Image};

pub struct NaiveNet {
    pub embedding: Vec<[f64; 2]>,
    /// (fan_in, fan_out, weights row-major by input, biases)
    pub layers: Vec<(usize, usize, Vec<f64>, Vec<f64>)>,
}

impl NaiveNet {
    pub fn from_model(model: &DisplacementModel<f64>) -> Self {
        NaiveNet {
            embedding: model.embedding().rows().to_vec(),
            layers: model
                .params()
                .layers
                .iter()
                .map(|l| (l.fan_in, l.fan_out, l.weights.clone(), l.biases.clone()))
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.2.len() + l.3.len()).sum()
    }

    /// Parameters in storage order: per layer, weights then biases.
    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in &mut self.layers {
            if index < layer.2.len() {
                return &mut layer.2[index];
            }
            index -= layer.2.len();
            if index < layer.3.len() {
                return &mut layer.3[index];
            }
            index -= layer.3.len();
        }
        panic!("parameter index out of range");
    }

    pub fn forward(&self, x: f64, y: f64) -> [f64; 2] {
        let ne = self.embedding.len();
        let mut act = vec![0.0; 2 * ne];
        for (k, b) in self.embedding.iter().enumerate() {
            let phase = b[0] * x + b[1] * y;
            act[k] = phase.sin();
            act[k + ne] = phase.cos();
        }
        let last = self.layers.len() - 1;
        for (i, (fan_in, fan_out, w, b)) in self.layers.iter().enumerate() {
            let mut next = b.clone();
            for j in 0..*fan_out {
                for p in 0..*fan_in {
                    next[j] += act[p] * w[p * fan_out + j];
                }
                if i < last {
                    next[j] = next[j].tanh();
                }
            }
            act = next;
        }
        [act[0], act[1]]
    }

    /// Sample positions of every pixel of a `w x h` image.
    pub fn positions(&self, w: usize, h: usize) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let d = self.forward(x as f64, y as f64);
                out.push([x as f64 + d[0], y as f64 + d[1]]);
            }
        }
        out
    }

    pub fn loss(&self, first: &Image, second: &Image) -> f64 {
        let (w, h) = first.dims();
        let pos = self.positions(w, h);
        let mut sum = 0.0;
        for y in 0..h {
            for x in 0..w {
                let p = pos[y * w + x];
                let r = first.get(x, y) as f64 - bilinear(second, p[0], p[1]);
                sum += r * r;
            }
        }
        sum / (w * h) as f64
    }
}

pub fn bilinear(img: &Image, x: f64, y: f64) -> f64 {
    let (w, h) = img.dims();
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let px = |ix: f64, iy: f64| -> f64 {
        if ix < 0.0 || iy < 0.0 || ix >= w as f64 || iy >= h as f64 {
            0.0
        } else {
            img.get(ix as usize, iy as usize) as f64
        }
    };
    px(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + px(x0 + 1.0, y0) * fx * (1.0 - fy)
        + px(x0, y0 + 1.0) * (1.0 - fx) * fy
        + px(x0 + 1.0, y0 + 1.0) * fx * fy
}

fn cells(pos: &[[f64; 2]]) -> Vec<(i64, i64)> {
    pos.iter().map(|p| (p[0].floor() as i64, p[1].floor() as i64)).collect()
}

/// Central difference of the reference loss in parameter `index`.
///
/// The bilinear surface has kinks on lattice lines; when a step of `h`
/// moves any sample across one, the step is divided by 10 until the three
/// evaluations share cells (down to `h * 1e-4`). Returns the derivative and
/// the step used.
pub fn central_difference(net: &NaiveNet, first: &Image, second: &Image, index: usize, h: f64) -> (f64, f64) {
    let (w, ht) = first.dims();
    let mut probe = NaiveNet {
        embedding: net.embedding.clone(),
        layers: net.layers.clone(),
    };
    let base = cells(&net.positions(w, ht));
    let theta = *probe.param_mut(index);
    let mut step = h;
    loop {
        *probe.param_mut(index) = theta + step;
        let plus_cells = cells(&probe.positions(w, ht));
        let plus = probe.loss(first, second);
        *probe.param_mut(index) = theta - step;
        let minus_cells = cells(&probe.positions(w, ht));
        let minus = probe.loss(first, second);
        let clean = plus_cells == base && minus_cells == base;
        if clean || step <= h * 1e-4 {
            return ((plus - minus) / (2.0 * step), step);
        }
        step /= 10.0;
    }
}
