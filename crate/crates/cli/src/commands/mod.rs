pub mod datagen;
pub mod gradcheck;
pub mod orthobench;
pub mod stability;
pub mod train;
