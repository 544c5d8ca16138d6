"""Fully convolutional sequence networks for video summarization."""
