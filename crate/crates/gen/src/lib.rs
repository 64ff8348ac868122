//! Image-generation backends and the batch orchestrator that turns a prompt,
//! an attribute catalog and a target distribution into a run directory of
//! PNGs plus a JSON-lines manifest.

pub mod backend;
pub mod batch;
pub mod clock;
pub mod error;
pub mod http;
pub mod mock;
pub mod request;

pub use backend::ImageBackend;
pub use batch::{generate_batch, image_file, plan_run, BatchOptions, BatchOutcome, BatchSpec, Fusion, Progress};
pub use clock::{Clock, FixedClock, SystemClock};
pub use error::{GenError, Result};
pub use http::{HttpBackend, HttpBackendConfig, ENV_BACKEND_URL};
pub use mock::{MockBackend, MOCK_SIZE};
pub use request::{is_png, BackendProfile, GeneratedImage, GenerationRequest, ImageMetadata};
