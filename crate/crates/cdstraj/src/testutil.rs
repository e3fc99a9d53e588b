use crate::config::Config;

/// Small but structurally complete configuration for fast tests.
pub fn tiny_config() -> Config {
    let mut cfg = Config::default();
    cfg.data.n_scenes = 6;
    cfg.data.agents_per_scene = 3;
    cfg.diffusion.gamma = 4;
    cfg.diffusion.k = 2;
    cfg.diffusion.d_ctx = 8;
    cfg.diffusion.ctx_embed = 6;
    cfg.diffusion.hidden = 10;
    cfg.diffusion.step_embed = 4;
    cfg.st.d = 8;
    cfg.st.heads = 2;
    cfg.st.d_emb = 4;
    cfg.st.d_conf = 6;
    cfg.decoder.hidden = 6;
    cfg.decoder.feed_dim = 4;
    cfg
}
