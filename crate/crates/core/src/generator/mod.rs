//! Model descriptors, the seeded toy generator with transform hooks, and
//! activation dump directories.

mod descriptor;
mod dump;
mod toy;

pub use descriptor::{cnn_depth_for, default_batch_size, LayerDescriptor, ModelDescriptor};
pub use dump::{dump_activations, dump_file_name, load_external_dump, ActivationDump, DumpSet, DESCRIPTOR_FILE};
pub use toy::{latent_from_seed, ForwardOutput, Hook, ToyGenerator, NEGATIVE_SLOPE};
