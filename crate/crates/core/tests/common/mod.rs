#![allow(dead_code)]

use std::path::Path;

use artgan::dataset::write_png;
use artgan::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Procedural corpus: a disc or square of a random color over a darker
/// vertical gradient, values in [-1, 1].
pub fn shapes_corpus(count: usize, res: usize, seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let fg: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            let bg: [f64; 3] = [
                rng.random::<f64>() * 0.5,
                rng.random::<f64>() * 0.5,
                rng.random::<f64>() * 0.5,
            ];
            let cx = rng.random_range(0.3..0.7) * res as f64;
            let cy = rng.random_range(0.3..0.7) * res as f64;
            let radius = rng.random_range(0.15..0.3) * res as f64;
            let disc = rng.random_bool(0.5);
            Tensor::from_fn(&[3, res, res], |i| {
                let (c, y, x) = (i / (res * res), (i / res) % res, i % res);
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let inside = if disc {
                    dx * dx + dy * dy <= radius * radius
                } else {
                    dx.abs() <= radius && dy.abs() <= radius
                };
                let shade = if inside {
                    fg[c]
                } else {
                    bg[c] * (1.0 + y as f64 / res as f64) / 2.0
                };
                shade * 2.0 - 1.0
            })
        })
        .collect()
}

/// Writes `images` as `img_000.png`, `img_001.png`, ... into `dir`.
pub fn write_corpus(dir: &Path, images: &[Tensor<f64>]) {
    std::fs::create_dir_all(dir).unwrap();
    for (i, img) in images.iter().enumerate() {
        write_png(img, &dir.join(format!("img_{i:03}.png"))).unwrap();
    }
}

pub const SURVEY_HEADER: &str =
    "respondent_id,image_id,group,interesting,inspiring,innovative,overall,attribution";

/// Complete synthetic rating study held as plain arrays.
pub struct SyntheticSurvey {
    pub respondents: usize,
    /// First half of the images are real, second half generated.
    pub images: usize,
    /// scores[r][i][criterion]
    pub scores: Vec<Vec<[u8; 4]>>,
    pub artist: Vec<Vec<bool>>,
}

impl SyntheticSurvey {
    pub fn random(respondents: usize, images: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = (0..respondents)
            .map(|_| {
                (0..images)
                    .map(|_| [(); 4].map(|_| rng.random_range(1..=5u8)))
                    .collect()
            })
            .collect();
        let artist = (0..respondents)
            .map(|_| (0..images).map(|_| rng.random_bool(0.4)).collect())
            .collect();
        SyntheticSurvey {
            respondents,
            images,
            scores,
            artist,
        }
    }

    pub fn constant(respondents: usize, images: usize, value: u8) -> Self {
        SyntheticSurvey {
            respondents,
            images,
            scores: vec![vec![[value; 4]; images]; respondents],
            artist: vec![vec![false; images]; respondents],
        }
    }

    pub fn is_real(&self, image: usize) -> bool {
        image < self.images / 2
    }

    /// CSV text with rows in a seeded random order.
    pub fn to_csv(&self, shuffle_seed: u64) -> String {
        let mut rows = Vec::new();
        for r in 0..self.respondents {
            for i in 0..self.images {
                let s = self.scores[r][i];
                rows.push(format!(
                    "resp{r:02},img{i:02},{},{},{},{},{},{}",
                    if self.is_real(i) { "real" } else { "generated" },
                    s[0],
                    s[1],
                    s[2],
                    s[3],
                    if self.artist[r][i] { "artist" } else { "computer" }
                ));
            }
        }
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let mut text = String::from(SURVEY_HEADER);
        text.push('\n');
        for row in rows {
            text += &row;
            text.push('\n');
        }
        text
    }
}
