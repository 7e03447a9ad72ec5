const runner = require('simple-pkg/test/fixtures/runner');
runner.go('payload');
