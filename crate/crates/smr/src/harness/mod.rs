//! Experiment harness: file formats, TOML experiment configuration, and
//! the end-to-end pipelines behind the CLI and the examples.

pub mod config;
pub mod formats;
pub mod runner;

/// Install a global rayon pool sized from the `SMR_THREADS` environment
/// variable. Call once at process start; later calls are ignored (the
/// global pool can only be configured once).
pub fn init_thread_pool() -> crate::Result<()> {
    if let Ok(v) = std::env::var("SMR_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| crate::SmrError::Config(format!("SMR_THREADS = '{v}' is not a number")))?;
        if n == 0 {
            return Err(crate::SmrError::Config("SMR_THREADS must be at least 1".into()));
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}
