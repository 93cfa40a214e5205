//! Dense bi-encoder retrieval of exemplar responses.

mod encoder;
mod pool;
mod search;
mod train;

pub use encoder::{dpr_loss, dpr_loss_var, dpr_similarity, BiEncoder, EncodedDprSample};
pub use pool::{build_pools, load_pools, save_pools, CandidatePool, PoolEntry, PoolSet};
pub use search::{retrieve_exemplars, retrieve_for_pairs, top_q, Exemplar, RetrievalResult};
pub use train::{rank_first_rate, train_retriever, RetrieverReport, RetrieverSchedule};

#[cfg(test)]
mod tests;
