"""Per-modality media loading.

Three input kinds, matching the ablation the extractor exists to support:
the item's title (a text file), its cover image, and the raw video. Arrays
saved with numpy (.npy) load with no extra dependencies, which is what the
tests and the offline stub use; other image and video files go through
OpenCV when it is installed. Every failure becomes MediaError so pipelines
can skip the item with a logged reason and keep going.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import MediaError
from .frames import sample_frame_indices

MODALITIES = ("title", "cover", "video")


@dataclass
class MediaItem:
    kind: str                 # one of MODALITIES
    text: str = ""            # title modality
    frames: np.ndarray = None  # (T, ...) uint8/float array for cover/video

    def signature(self) -> bytes:
        """Stable bytes identifying the content, used by the stub adapter."""
        if self.kind == "title":
            return b"t:" + self.text.encode("utf-8")
        arr = np.ascontiguousarray(self.frames)
        shape = ",".join(map(str, arr.shape)).encode()
        return b"f:" + shape + b":" + arr.tobytes()


def _load_array(path):
    try:
        return np.load(path, allow_pickle=False)
    except Exception as exc:
        raise MediaError(f"{path}: cannot load array: {exc}") from exc


def _cv2():
    try:
        import cv2
        return cv2
    except ImportError as exc:
        raise MediaError(
            "OpenCV is needed for non-.npy media; install opencv-python") from exc


def load_title(path) -> MediaItem:
    try:
        text = Path(path).read_text(encoding="utf-8").strip()
    except OSError as exc:
        raise MediaError(f"{path}: cannot read title: {exc}") from exc
    if not text:
        raise MediaError(f"{path}: empty title")
    return MediaItem("title", text=text)


def load_cover(path) -> MediaItem:
    if str(path).endswith(".npy"):
        img = _load_array(path)
        if img.ndim not in (2, 3):
            raise MediaError(f"{path}: expected an image array, got shape {img.shape}")
    else:
        img = _cv2().imread(str(path))
        if img is None:
            raise MediaError(f"{path}: OpenCV could not decode the image")
    return MediaItem("cover", frames=img[None])


def load_video(path, max_frames=16) -> MediaItem:
    if str(path).endswith(".npy"):
        clip = _load_array(path)
        if clip.ndim < 3:
            raise MediaError(f"{path}: expected a (frames, ...) array, got shape {clip.shape}")
        if clip.shape[0] == 0:
            raise MediaError(f"{path}: zero-frame clip")
        frames = clip[sample_frame_indices(clip.shape[0], max_frames)]
        return MediaItem("video", frames=frames)

    cv2 = _cv2()
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise MediaError(f"{path}: OpenCV could not open the video")
    try:
        grabbed = []
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            grabbed.append(frame)
    finally:
        cap.release()
    if not grabbed:
        raise MediaError(f"{path}: no decodable frames")
    keep = sample_frame_indices(len(grabbed), max_frames)
    return MediaItem("video", frames=np.stack([grabbed[i] for i in keep]))


def load_media(modality, path, max_frames=16) -> MediaItem:
    if not Path(path).exists():
        raise MediaError(f"{path}: no such file")
    if modality == "title":
        return load_title(path)
    if modality == "cover":
        return load_cover(path)
    if modality == "video":
        return load_video(path, max_frames)
    raise ValueError(f"unknown modality {modality!r} (expected one of {MODALITIES})")
