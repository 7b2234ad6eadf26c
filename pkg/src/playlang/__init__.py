"""Language-conditioned imitation learning from unstructured play, desk scale.

Subpackage map:
  autodiff / optim   reverse-mode tape engine and Adam
  env                deterministic 2D playground
  oracle             scripted controllers, play and demo collection
  data               hindsight relabeling, instruction pairing, batching
  language           tokenizer, synonym lexicon, frozen sentence embedder
  nets / trainer     encoders, latent-plan losses, multi-context training
  policy             inference-time agent over a trained checkpoint
  harness            chain benchmarks, rollout scoring, ablation reports
  config / storage   typed config, dataset and checkpoint files
  cli / service      command line and WebSocket front door
"""

__version__ = "0.1.0"
