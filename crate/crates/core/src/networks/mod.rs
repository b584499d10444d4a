//! Generator and discriminator architectures on a residual
//! encoder/decoder backbone.

mod discriminator;
mod generator;
mod layers;

pub use discriminator::{build_discriminator, concat_pair, Discriminator, DiscriminatorConfig};
pub use generator::{
    build_generator, Generator, GeneratorConfig, GeneratorS1, GeneratorS2, DEFAULT_N_MASKS, SUPPORTED_SIZES,
};
pub use layers::{count_parameters, Param, ParamSet, Parameterized};
