import os
from dotenv import load_dotenv

load_dotenv()


class Config:
    # IPF / RAS stopping rule
    DEFAULT_TOLERANCE = float(os.getenv("CONFNORM_TOLERANCE", "1e-10"))
    DEFAULT_MAX_STEPS = int(os.getenv("CONFNORM_MAX_STEPS", "10000"))

    # smoothing: eps = max(EPS_FACTOR * M_++ / C^2, EPS_FLOOR)
    EPS_FACTOR = float(os.getenv("CONFNORM_EPS_FACTOR", "1e-6"))
    EPS_FLOOR = float(os.getenv("CONFNORM_EPS_FLOOR", "1e-12"))

    DEFAULT_PROJECTION_DIM = int(os.getenv("CONFNORM_PROJECTION_DIM", "5"))
    THREADS = int(os.getenv("CONFNORM_THREADS", "1"))
    LOG_LEVEL = os.getenv("CONFNORM_LOG_LEVEL", "INFO").upper()

    SIGNIFICANT_DIGITS = 12
    CONFUSION_FORMATS = [
        ".csv",   # label,<class_1>,...,<class_C>
        ".json",  # {"labels": [...], "entries": [[...], ...]}
    ]


config = Config()
