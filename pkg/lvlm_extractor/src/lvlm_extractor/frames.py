"""Uniform temporal frame sampling."""


def sample_frame_indices(num_frames: int, max_frames: int = 16) -> list:
    """Indices of up to `max_frames` frames spread uniformly over a clip.

    Clips at or under the cap keep every frame; longer clips are strided
    with floor arithmetic, so a 160-frame clip at the default cap samples
    0, 10, ..., 150.
    """
    if num_frames < 0:
        raise ValueError(f"num_frames must be >= 0, got {num_frames}")
    if max_frames < 1:
        raise ValueError(f"max_frames must be >= 1, got {max_frames}")
    if num_frames <= max_frames:
        return list(range(num_frames))
    return [i * num_frames // max_frames for i in range(max_frames)]
