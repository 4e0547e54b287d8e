from hypothesis import HealthCheck, settings

# derandomized so Monte Carlo properties give the same verdict on every run
settings.register_profile("cbilab", deadline=None, derandomize=True, print_blob=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("cbilab")
