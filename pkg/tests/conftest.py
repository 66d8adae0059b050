from hypothesis import HealthCheck, settings

# The first call into a jitted kernel pays compilation (or cache-load) time,
# which trips hypothesis' per-example deadline even though later examples run
# in microseconds.  Timing is not what these tests check, so switch it off.
settings.register_profile(
    "drlab",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("drlab")
