pub mod cli;
pub mod flow;
pub mod hmm;
pub mod imaging;
pub mod mixtures;
pub mod numerics;
pub mod pipeline;
pub mod selection;
pub mod synth;
