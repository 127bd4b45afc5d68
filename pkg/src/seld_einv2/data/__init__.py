"""Synthetic FOA scenes, label files, segmentation, augmentation and the dataset reader."""
