"""Selective pre-training with differentially private fine-tuning."""
