//! Recordings, labeling, features and synthetic data.

pub mod dataset;
pub mod labeling;
pub mod recording;
pub mod scaling;
pub mod spectrogram;
pub mod synth;

pub use dataset::{LabeledWindow, PatientData, SplitConfig};
pub use labeling::{leading_seizures, Label, LabelingConfig};
pub use recording::EEGRecording;
pub use scaling::FeatureScaler;
pub use spectrogram::{spectrogram, SpectrogramConfig};
pub use synth::SyntheticSpec;
