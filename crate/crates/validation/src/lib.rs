//! Fixtures for the acceptance suite in `tests/acceptance.rs`.
//!
//! The rows below are the published untimed results for CelebA-64,
//! FFHQ-1024, ImageNet-5 and CIFAR-10, transcribed as printed (percentages,
//! one decimal). `std` is the bootstrap standard deviation of the score,
//! not the per-evaluator spread.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRow {
    pub dataset: &'static str,
    pub model: &'static str,
    pub score: f64,
    pub fake_error: f64,
    pub real_error: f64,
    pub std: f64,
    pub ci: (f64, f64),
    pub kid: f64,
    pub fid: f64,
    pub precision: f64,
}

const fn row(
    dataset: &'static str,
    model: &'static str,
    [score, fake_error, real_error, std]: [f64; 4],
    ci: (f64, f64),
    [kid, fid, precision]: [f64; 3],
) -> ResultRow {
    ResultRow { dataset, model, score, fake_error, real_error, std, ci, kid, fid, precision }
}

pub const UNTIMED_RESULTS: [ResultRow; 25] = [
    row("celeba-64", "stylegan-trunc", [50.7, 62.2, 39.3, 1.3], (48.2, 53.1), [0.005, 131.7, 0.982]),
    row("celeba-64", "progan", [40.3, 46.2, 34.4, 0.9], (38.5, 42.0), [0.001, 2.5, 0.990]),
    row("celeba-64", "began", [10.0, 6.2, 13.8, 1.6], (7.2, 13.3), [0.056, 67.7, 0.326]),
    row("celeba-64", "wgan-gp", [3.8, 1.7, 5.9, 0.6], (3.2, 5.7), [0.046, 43.6, 0.654]),
    row("ffhq-1024", "stylegan-trunc", [27.6, 28.4, 26.8, 2.4], (22.9, 32.4), [0.007, 13.8, 0.976]),
    row("ffhq-1024", "stylegan-no-trunc", [19.0, 18.5, 19.5, 1.8], (15.5, 22.4), [0.001, 4.4, 0.983]),
    row("imagenet-5", "biggan-trunc/lemon", [18.4, 21.9, 14.9, 2.3], (14.2, 23.1), [0.043, 94.22, 0.784]),
    row("imagenet-5", "biggan-no-trunc/lemon", [20.2, 22.2, 18.1, 2.2], (16.0, 24.8), [0.036, 87.54, 0.774]),
    row("imagenet-5", "sngan/lemon", [12.0, 10.8, 13.3, 1.6], (9.0, 15.3), [0.053, 117.90, 0.656]),
    row("imagenet-5", "biggan-trunc/samoyed", [19.9, 23.5, 16.2, 2.6], (15.0, 25.1), [0.027, 56.94, 0.794]),
    row("imagenet-5", "biggan-no-trunc/samoyed", [19.7, 23.2, 16.1, 2.2], (15.5, 24.1), [0.014, 46.14, 0.906]),
    row("imagenet-5", "sngan/samoyed", [5.8, 3.4, 8.2, 0.9], (4.1, 7.8), [0.046, 88.68, 0.785]),
    row("imagenet-5", "biggan-trunc/library", [17.4, 22.0, 12.8, 2.1], (13.3, 21.6), [0.049, 98.45, 0.695]),
    row("imagenet-5", "biggan-no-trunc/library", [22.9, 28.1, 17.6, 2.1], (18.9, 27.2), [0.029, 78.49, 0.814]),
    row("imagenet-5", "sngan/library", [13.6, 15.1, 12.1, 1.9], (10.0, 17.5), [0.043, 94.89, 0.814]),
    row("imagenet-5", "biggan-trunc/french-horn", [7.3, 9.0, 5.5, 1.8], (4.0, 11.2), [0.031, 78.21, 0.732]),
    row("imagenet-5", "biggan-no-trunc/french-horn", [6.9, 8.6, 5.2, 1.4], (4.3, 9.9), [0.042, 96.18, 0.757]),
    row("imagenet-5", "sngan/french-horn", [3.6, 5.0, 2.2, 1.0], (1.8, 5.9), [0.156, 196.12, 0.674]),
    row("imagenet-5", "biggan-trunc/baseball-player", [1.9, 1.9, 1.9, 0.7], (0.8, 3.5), [0.049, 91.31, 0.853]),
    row("imagenet-5", "biggan-no-trunc/baseball-player", [2.2, 3.3, 1.2, 0.6], (1.3, 3.5), [0.026, 76.71, 0.838]),
    row("imagenet-5", "sngan/baseball-player", [2.8, 3.6, 1.9, 1.5], (0.8, 6.2), [0.052, 105.82, 0.785]),
    row("cifar-10", "stylegan-trunc", [23.3, 28.2, 18.5, 1.6], (20.1, 26.4), [0.005, 62.9, 0.982]),
    row("cifar-10", "progan", [14.8, 18.5, 11.0, 1.6], (11.9, 18.0), [0.001, 53.2, 0.990]),
    row("cifar-10", "began", [14.5, 14.6, 14.5, 1.7], (11.3, 18.1), [0.056, 96.2, 0.326]),
    row("cifar-10", "wgan-gp", [13.2, 15.3, 11.1, 2.3], (9.1, 18.1), [0.046, 104.0, 0.654]),
];

pub fn rows(dataset: &str) -> Vec<ResultRow> {
    UNTIMED_RESULTS.iter().filter(|r| r.dataset == dataset).copied().collect()
}
