mod conv;
mod dense;
mod elementwise;
mod pool;
mod reduce;
mod shape;
