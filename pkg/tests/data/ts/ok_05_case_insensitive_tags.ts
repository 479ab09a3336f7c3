@PROBLEMNAME CaseTags
@UNIVARIATE TRUE
@CLASSLABEL true x y
@DATA
4,5,6:y
