//! Synthetic frequency-band classification, AdamW training and the
//! mixer/ramp ablation.

mod ablation;
mod dataset;
mod optim;
mod trainer;

pub use ablation::{run_ablation, AblationRow, Variant, HIGH_BANDS};
pub use dataset::{
    gen_dataset, gen_split, grating, FreqBandDataset, BAND_WIDTH, IMAGE_SIZE, NOISE_STD, NUM_BANDS, NYQUIST,
    TEST_SIZE, TRAIN_SIZE,
};
pub use optim::{decays, AdamW, Moments};
pub use trainer::{batch_loss, evaluate, moving_average, predict, train, train_step, Accuracy, TrainState, BATCH_SIZE};
