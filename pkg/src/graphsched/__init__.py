"""Job-shop scheduling with message-passing graph encoders and per-resource PPO agents."""

__version__ = "0.1.0"
