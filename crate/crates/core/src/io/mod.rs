//! Files and text formats.

mod binary;
mod checkpoint;
mod classes;
mod config;
mod pnm;
mod tensor_file;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use classes::{ClassEntry, ClassTable, BACKGROUND_RGB};
pub use config::{parse_config, render_config, Config, Preset};
pub use pnm::{
    load_gray_image, load_mask, load_pnm, read_mask, read_pnm, render_overlay, save_gray_image,
    save_mask, save_pnm, write_mask, write_overlay, write_pnm, Pnm, PnmKind,
};
pub use tensor_file::{load_tensor, read_tensor, save_tensor, write_tensor, AnyTensor, MAGIC, VERSION};
