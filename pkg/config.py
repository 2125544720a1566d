# config.py


class Config:
    DEBUG = False
    TESTING = False
    EXPORT_ROOT_SUBDIR = "runs"
    # run directories and the registry database live under the instance folder


class ProductionConfig(Config):
    pass


class DevelopmentConfig(Config):
    DEBUG = True


class TestingConfig(Config):
    TESTING = True
    DEBUG = True
